"""Model-based LSTD(0) policy iteration and the closed-loop mitigation rollout."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp_env import MitigationEnv, RewardKind, StageRecord, StageState, features
from .optimize import project_feasible, solve_concave_qp, solve_linear
from .seeding import as_seedseq, child_seed

log = logging.getLogger(__name__)


def model_hash(env: MitigationEnv) -> str:
    h = hashlib.sha256(env.model.to_json().encode())
    h.update(np.float64(env.delta).tobytes())
    return h.hexdigest()[:16]


@dataclass
class Policy:
    """Greedy one-step-lookahead policy on a linear value function."""

    w: np.ndarray
    gamma: float
    kind: RewardKind
    env: MitigationEnv = field(repr=False)
    converged: bool = True
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.kind = RewardKind.parse(self.kind)
        self.w = np.asarray(self.w, dtype=float)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if len(self.w) != self.env.D:
            raise ValueError(f"expected {self.env.D} weights, got {len(self.w)}")

    def value(self, state: StageState) -> float:
        return float(features(state) @ self.w)

    def __call__(self, state: StageState) -> np.ndarray:
        return policy_improvement(self, state)

    def to_json(self) -> str:
        fs = self.env.base_feasible.to_dict()
        fs["budgets"] = self.env.budgets.tolist()
        return json.dumps({"w": self.w.tolist(), "gamma": self.gamma, "kind": self.kind.value,
                           "feasible": fs, "model_hash": model_hash(self.env)})

    @classmethod
    def from_json(cls, text: str, env: MitigationEnv) -> "Policy":
        d = json.loads(text)
        if d["model_hash"] != model_hash(env):
            raise ValueError("policy was trained on a different model")
        return cls(np.array(d["w"]), d["gamma"], d["kind"], env)


@dataclass
class SampleSet:
    states: list
    actions: np.ndarray
    rewards: np.ndarray
    Psi: np.ndarray
    Psi_next: np.ndarray


def rnd_action(feasible, rng) -> np.ndarray:
    u = np.where(feasible.mask, rng.uniform(0.0, 1.0, feasible.n) * feasible.cap, 0.0)
    return project_feasible(u, feasible)


def collect_samples(env: MitigationEnv, S: int, horizon: int = 10, seed=None,
                    behavior: Callable | None = None) -> list[StageState]:
    """Visited states of ``horizon``-stage rollouts from the zero state.

    The behavior policy defaults to uniform random feasible interventions.
    """
    if S < 1:
        raise ValueError("S must be positive")
    root = as_seedseq(seed)
    rng = np.random.default_rng(child_seed(root, 0))
    states = []
    traj = 0
    while len(states) < S:
        x = env.zero_state()
        for k in range(horizon):
            states.append(x)
            if len(states) >= S:
                break
            fs = env.feasible(x.k)
            u = rnd_action(fs, rng) if behavior is None else behavior(x)
            x, _, _ = env.step(x, u, child_seed(root, 1, traj, k))
        traj += 1
    return states


def build_samples(env: MitigationEnv, states, actions, kind) -> SampleSet:
    """Expected rewards and expected next features for given state-action pairs."""
    Psi = np.array([features(x) for x in states])
    Psi_next = np.array([env.expected_next_features(x, u) for x, u in zip(states, actions)])
    r = np.empty(len(states))
    for s, (x, u) in enumerate(zip(states, actions)):
        c0, g, Q = env.reward_terms(kind, x)
        r[s] = c0 + g @ u + u @ Q @ u
    return SampleSet(list(states), np.asarray(actions), r, Psi, Psi_next)


@dataclass
class EvaluationResult:
    w: np.ndarray
    ridge: float
    cond: float


def policy_evaluation(samples: SampleSet, gamma: float, full_output: bool = False):
    """Solve ``Psi^T (Psi - gamma Psi') w = Psi^T r``.

    If the system's condition number exceeds 1e12 a ridge of
    ``1e-8 * mean|diag|`` is added and a warning is logged.
    """
    Psi, Psi_next, r = samples.Psi, samples.Psi_next, samples.rewards
    A = Psi.T @ (Psi - gamma * Psi_next)
    b = Psi.T @ r
    cond = np.linalg.cond(A)
    ridge = 0.0
    if not np.isfinite(cond) or cond > 1e12:
        ridge = 1e-8 * max(np.abs(np.diag(A)).mean(), 1.0)
        log.info("LSTD system ill-conditioned (cond=%.2e); ridge %.1e added", cond, ridge)
        A = A + ridge * np.eye(len(b))
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("LSTD system singular after ridge") from exc
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("LSTD system singular after ridge")
    res = EvaluationResult(w, ridge, float(cond))
    return res if full_output else w


def expected_next_value(policy: Policy, state: StageState, u) -> float:
    """``E[V(x') | x, u]``; stored blocks shift deterministically, the newest get stage means."""
    return float(policy.env.expected_next_features(state, u) @ policy.w)


def lookahead_terms(policy: Policy, state: StageState):
    """``(c0, g, Q)`` of ``u -> E[R(x, u)] + gamma E[V(x')]``."""
    env = policy.env
    c0, g, Q = env.reward_terms(policy.kind, state)
    v0, gv = env.next_value_terms(policy.w, state)
    return c0 + policy.gamma * v0, g + policy.gamma * gv, Q


def lookahead_value(policy: Policy, state: StageState, u) -> float:
    c0, g, Q = lookahead_terms(policy, state)
    u = np.asarray(u, float)
    return float(c0 + g @ u + u @ Q @ u)


def policy_improvement(policy: Policy, state: StageState) -> np.ndarray:
    """Greedy action ``argmax_u E[R(x, u) + gamma V(x')]``."""
    _, g, Q = lookahead_terms(policy, state)
    fs = policy.env.feasible(state.k)
    if policy.kind is RewardKind.CORRELATION:
        return solve_linear(g, fs)
    return solve_concave_qp(g, Q, fs, u0=None)


def policy_iteration(env: MitigationEnv, states, kind, gamma: float = 0.7,
                     initial_actions=None, tol: float = 0.1, max_iter: int = 50,
                     seed=None) -> Policy:
    """LSTD policy iteration.

    The first evaluation uses ``initial_actions`` (the behavior actions, or
    fresh random actions drawn from ``seed`` when omitted).  Stops when
    ``||w_new - w_old|| < tol``; the returned policy records the sequence of
    step norms in ``history`` and ``converged``.
    """
    kind = RewardKind.parse(kind)
    if initial_actions is None:
        rng = np.random.default_rng(seed)
        initial_actions = [rnd_action(env.feasible(x.k), rng) for x in states]
    actions = np.asarray(initial_actions, dtype=float)
    w = policy_evaluation(build_samples(env, states, actions, kind), gamma)
    policy = Policy(w, gamma, kind, env, converged=False)
    for it in range(max_iter):
        actions = np.array([policy_improvement(policy, x) for x in states])
        w_new = policy_evaluation(build_samples(env, states, actions, kind), gamma)
        dw = float(np.linalg.norm(w_new - policy.w))
        policy.history.append(dw)
        log.info("policy iteration %d: |dw| = %.4g", it + 1, dw)
        policy.w = w_new
        if dw < tol:
            policy.converged = True
            break
    else:
        warnings.warn("policy iteration hit max_iter without meeting the tolerance", RuntimeWarning)
    return policy


@dataclass
class Rollout:
    records: list
    total: float
    kind: RewardKind


def stage_seed(base, run: int, k: int) -> np.random.SeedSequence:
    """Seed of stage ``k`` of evaluation run ``run``; shared across methods."""
    return child_seed(as_seedseq(base), run, k)


def run_mitigation(env: MitigationEnv, policy: Callable, K: int = 10, seed=0, gamma: float = 0.7,
                   kind="corr", run: int = 0, keep_logs: bool = False) -> Rollout:
    """Closed-loop rollout: observe, choose ``u = policy(state)``, simulate.

    Returns the per-stage records and ``sum_k gamma^k R^k`` of the chosen
    reward kind.
    """
    kind = RewardKind.parse(kind)
    x = env.zero_state()
    records, total = [], 0.0
    for k in range(K):
        u = np.asarray(policy(x), dtype=float)
        x_next, rew, logs = env.step(x, u, stage_seed(seed, run, k))
        n = env.n
        records.append(StageRecord(k, u, rew["corr"], rew["diff"], x_next.z_M[:n],
                                   x_next.z_F[:n], logs if keep_logs else ()))
        total += gamma ** k * rew[kind.value]
        x = x_next
    return Rollout(records, total, kind)
