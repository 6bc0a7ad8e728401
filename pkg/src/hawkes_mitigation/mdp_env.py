"""Stage-wise MDP around the fake (F) and mitigation (M) processes.

State ``x^k = [y_M; y_F; z_M; z_F]``: carries plus per-node counts in the
``L`` most recent stage-length intervals, newest block first
(``z[(l-1) n + i]`` = events of node i in the l-th interval before the
current stage).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .hawkes_core import EventLog, NetworkModel, carry_at_end, simulate_stage
from .moments import MomentContext, stage_mean_counts
from .optimize import FeasibleSet
from .seeding import as_seedseq, child_seed


class RewardKind(str, enum.Enum):
    CORRELATION = "corr"
    DIFFERENCE = "diff"

    @classmethod
    def parse(cls, value) -> "RewardKind":
        if isinstance(value, cls):
            return value
        aliases = {"correlation": "corr", "difference": "diff"}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


@dataclass(frozen=True)
class StageState:
    k: int
    y_M: np.ndarray
    y_F: np.ndarray
    z_M: np.ndarray
    z_F: np.ndarray
    clock: float = 0.0

    def __post_init__(self):
        for name in ("y_M", "y_F", "z_M", "z_F"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.y_M)
        if len(self.y_F) != n or len(self.z_M) != len(self.z_F) or len(self.z_M) % max(n, 1):
            raise ValueError("inconsistent state block sizes")
        if (self.y_M < 0).any() or (self.y_F < 0).any():
            raise ValueError("carries must be nonnegative")
        z = np.concatenate([self.z_M, self.z_F])
        if (z < 0).any() or not np.all(z == np.round(z)):
            raise ValueError("counts must be nonnegative integers")

    @property
    def n(self) -> int:
        return len(self.y_M)

    @property
    def L(self) -> int:
        return len(self.z_M) // self.n

    @classmethod
    def zero(cls, n: int, L: int = 2, clock: float = 0.0) -> "StageState":
        return cls(0, np.zeros(n), np.zeros(n), np.zeros(n * L), np.zeros(n * L), clock)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.y_M, self.y_F, self.z_M, self.z_F])


def features(state: StageState) -> np.ndarray:
    """``psi = [z_M; z_F; 1]`` of length ``2 n L + 1``."""
    return np.concatenate([state.z_M, state.z_F, [1.0]])


def shift_blocks(z: np.ndarray, newest: np.ndarray) -> np.ndarray:
    n = len(newest)
    return np.concatenate([newest, z[: len(z) - n]])


def reward_from_counts(kind, z_M, z_F, B) -> float:
    kind = RewardKind.parse(kind)
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    M, F = B @ np.asarray(z_M, float), B @ np.asarray(z_F, float)
    if kind is RewardKind.CORRELATION:
        return float(M @ F) / n
    d = M - F
    return -float(d @ d) / n


def realized_reward(kind, stage_log: EventLog, B, t0: float | None = None,
                    t1: float | None = None) -> float:
    """Reward of one stage from its (merged F and M) event log."""
    n = np.asarray(B).shape[0]
    t0 = stage_log.t_start if t0 is None else t0
    t1 = stage_log.t_end if t1 is None else t1
    z_M = stage_log.counts(n, "M", t0, t1)
    z_F = stage_log.counts(n, "F", t0, t1)
    return reward_from_counts(kind, z_M, z_F, B)


class MitigationEnv:
    """Model, stage length, features and per-stage feasible sets.

    ``budgets`` holds the budget of each stage; stage ``k`` uses
    ``budgets[k % len(budgets)]``.
    """

    def __init__(self, model: NetworkModel, feasible: FeasibleSet, delta: float = 1.0,
                 L: int = 2, budgets=None, m: int = 64):
        self.model = model
        self.n = model.n
        self.delta = float(delta)
        self.L = int(L)
        self.base_feasible = feasible
        self.budgets = np.atleast_1d(feasible.C if budgets is None else np.asarray(budgets, float))
        self.ctx = MomentContext.from_model(model, delta, m)
        self.K = model.B.T @ model.B
        self._feasible_cache = {}

    @property
    def D(self) -> int:
        return 2 * self.n * self.L + 1

    def feasible(self, k: int) -> FeasibleSet:
        C = float(self.budgets[k % len(self.budgets)])
        if C not in self._feasible_cache:
            self._feasible_cache[C] = self.base_feasible.with_budget(C)
        return self._feasible_cache[C]

    def zero_state(self) -> StageState:
        return StageState.zero(self.n, self.L)

    # -- expectations ---------------------------------------------------------
    def mean_counts(self, state: StageState, u) -> tuple[np.ndarray, np.ndarray]:
        m = self.model
        zM = stage_mean_counts(self.ctx, m.mu_M + np.asarray(u, float), state.y_M)
        zF = stage_mean_counts(self.ctx, m.mu_F, state.y_F)
        return zM, zF

    def reward_terms(self, kind, state: StageState):
        """``(c0, g, Q)`` with ``E[R(x, u)] = c0 + g @ u + u @ Q @ u``."""
        kind = RewardKind.parse(kind)
        n, K, G = self.n, self.K, self.ctx.Gamma
        m0, f = self.mean_counts(state, np.zeros(n))
        if kind is RewardKind.CORRELATION:
            Kf = K @ f
            return float(m0 @ Kf) / n, G.T @ Kf / n, np.zeros((n, n))
        p, q = self.ctx.variance_weights(K)
        d0 = m0 - f
        var0 = p @ self.model.mu_M + q @ state.y_M + p @ self.model.mu_F + q @ state.y_F
        c0 = -(d0 @ K @ d0 + var0) / n
        g = -(2.0 * G.T @ (K @ d0) + p) / n
        Q = -(G.T @ K @ G) / n
        return float(c0), g, Q

    def expected_next_features(self, state: StageState, u) -> np.ndarray:
        zM, zF = self.mean_counts(state, u)
        return np.concatenate([shift_blocks(state.z_M, zM), shift_blocks(state.z_F, zF), [1.0]])

    def next_value_terms(self, w, state: StageState):
        """``(c0, g)`` with ``E[V(x') | u] = c0 + g @ u`` for weights ``w``."""
        w = np.asarray(w, float)
        n, nL = self.n, self.n * self.L
        psi0 = self.expected_next_features(state, np.zeros(n))
        return float(psi0 @ w), self.ctx.Gamma.T @ w[:n]

    # -- transition -----------------------------------------------------------
    def step(self, state: StageState, u, seed=None):
        """Simulate one stage; returns ``(next_state, rewards, (log_M, log_F))``."""
        u = np.asarray(u, dtype=float)
        if not self.feasible(state.k).is_feasible(u):
            raise ValueError("infeasible intervention")
        root = as_seedseq(seed)
        s_M, s_F = child_seed(root, 0), child_seed(root, 1)
        t0, t1 = state.clock, state.clock + self.delta
        m = self.model
        log_M = simulate_stage(m, "M", state.y_M, u, (t0, t1), np.random.default_rng(s_M))
        log_F = simulate_stage(m, "F", state.y_F, None, (t0, t1), np.random.default_rng(s_F))
        n = self.n
        cM, cF = log_M.counts(n), log_F.counts(n)
        nxt = StageState(state.k + 1, carry_at_end(m, log_M, "M", state.y_M),
                         carry_at_end(m, log_F, "F", state.y_F),
                         shift_blocks(state.z_M, cM), shift_blocks(state.z_F, cF), t1)
        rewards = {kind.value: reward_from_counts(kind, cM, cF, m.B) for kind in RewardKind}
        return nxt, rewards, (log_M, log_F)


def expected_reward(kind, state: StageState, u, env: MitigationEnv) -> float:
    """Closed-form ``E[R(x, u)]`` for either reward kind."""
    u = np.asarray(u, dtype=float)
    if not env.feasible(state.k).is_feasible(u):
        raise ValueError("infeasible intervention")
    c0, g, Q = env.reward_terms(kind, state)
    return float(c0 + g @ u + u @ Q @ u)


def step(env: MitigationEnv, state: StageState, u, seed=None):
    return env.step(state, u, seed)


@dataclass
class StageRecord:
    k: int
    u: np.ndarray
    R_corr: float
    R_diff: float
    z_M: np.ndarray
    z_F: np.ndarray
    logs: tuple = field(default=(), repr=False)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "u": np.asarray(self.u).tolist(), "R_corr": self.R_corr,
                           "R_diff": self.R_diff, "z_M": np.asarray(self.z_M).tolist(),
                           "z_F": np.asarray(self.z_F).tolist()})


def trajectory_to_jsonl(records) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def trajectory_from_jsonl(text: str) -> list[StageRecord]:
    out = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(StageRecord(d["k"], np.array(d["u"]), d["R_corr"], d["R_diff"],
                                   np.array(d["z_M"]), np.array(d["z_F"])))
    return out
