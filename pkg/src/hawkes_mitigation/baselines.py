"""Comparison allocators: CEC, OPL, CLS, EXP and RND.

CEC and OPL share one certainty-equivalent planner: carries are propagated
by their expectations, stage rewards use the closed-form expected reward,
and the multi-stage program is solved by block-coordinate ascent.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .mdp_env import MitigationEnv, RewardKind, StageState
from .moments import stage_mean_counts
from .optimize import FeasibleSet, project_feasible, solve_concave_qp, solve_linear


class CentralityCache:
    """Shortest-path distances along influence flow and closeness centrality.

    An event at ``i`` is seen by the followers of ``i``, so the directed edge
    ``i -> j`` exists iff ``B[j, i] = 1``.  Unreachable pairs get distance
    ``n``.
    """

    def __init__(self, B):
        B = np.asarray(B, dtype=float)
        n = B.shape[0]
        adj = (B.T > 0).astype(float)
        np.fill_diagonal(adj, 0.0)
        dist = shortest_path(adj, method="D", directed=True, unweighted=True)
        dist[~np.isfinite(dist)] = n
        np.fill_diagonal(dist, 0.0)
        self.n = n
        self.dis = dist
        total = dist.sum(axis=1)
        self.closeness = np.where(total > 0, 1.0 / np.where(total > 0, total, 1.0), 0.0)


def water_fill(scores, feasible: FeasibleSet, iters: int = 200) -> np.ndarray:
    """``u_i = min(cap_i, s * score_i)`` with ``c @ u = min(C, c @ cap)``."""
    scores = np.where(feasible.mask, np.maximum(np.asarray(scores, float), 0.0), 0.0)
    cap, c = feasible.cap, feasible.c
    if not (scores > 0).any():
        return np.zeros(feasible.n)
    target = min(feasible.C, float(c @ np.where(scores > 0, cap, 0.0)))
    if target <= 0:
        return np.zeros(feasible.n)
    spend = lambda s: c @ np.minimum(cap, s * scores)
    lo, hi = 0.0, 1.0
    while spend(hi) < target:
        hi *= 2.0
        if hi > 1e300:
            break
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if spend(mid) < target:
            lo = mid
        else:
            hi = mid
    # lower bracket keeps the budget satisfied
    u = np.minimum(cap, lo * scores)
    return project_feasible(u, feasible)


def rnd_policy(feasible: FeasibleSet, seed=None) -> np.ndarray:
    """Uniform draw on the caps, projected onto the budget."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = np.where(feasible.mask, rng.uniform(0.0, 1.0, feasible.n) * feasible.cap, 0.0)
    return project_feasible(u, feasible)


def cls_policy(cache: CentralityCache, feasible: FeasibleSet) -> np.ndarray:
    return water_fill(cache.closeness, feasible)


def fake_exposures(state: StageState, B) -> np.ndarray:
    """Fake-news exposures per node summed over the stored intervals."""
    n = state.n
    counts = state.z_F.reshape(state.L, n).sum(axis=0)
    return np.asarray(B, float) @ counts


def exp_policy(cache: CentralityCache, state: StageState, B, feasible: FeasibleSet) -> np.ndarray:
    """Exposure-weighted closeness ``sum_{j != i} F_j / dis(i, j)``."""
    expo = fake_exposures(state, B)
    if not (expo > 0).any():
        return cls_policy(cache, feasible)
    inv = np.zeros_like(cache.dis)
    off = ~np.eye(cache.n, dtype=bool)
    inv[off] = 1.0 / cache.dis[off]
    score = inv @ expo
    if not (score[feasible.mask] > 0).any():
        return cls_policy(cache, feasible)
    return water_fill(score, feasible)


# -- certainty-equivalent planning ------------------------------------------------

@dataclass
class Plan:
    U: np.ndarray
    value: float
    n_sweeps: int
    converged: bool


def _stage_quantities(env: MitigationEnv, state: StageState, U):
    """Expected M counts and carries along the plan, plus the fixed F path."""
    ctx, mdl = env.ctx, env.model
    H = len(U)
    yM, yF = state.y_M.copy(), state.y_F.copy()
    carry_map = ctx.exp_delta + ctx.omega * ctx.Upsilon - ctx.I
    mM, fF, ysM, ysF = [], [], [], []
    for j in range(H):
        ysM.append(yM)
        ysF.append(yF)
        mM.append(stage_mean_counts(ctx, mdl.mu_M + U[j], yM))
        fF.append(stage_mean_counts(ctx, mdl.mu_F, yF))
        yM = carry_map @ (mdl.mu_M + U[j]) + ctx.exp_delta @ yM
        yF = carry_map @ mdl.mu_F + ctx.exp_delta @ yF
    return np.array(mM), np.array(fF), np.array(ysM), np.array(ysF), carry_map


def plan_value(env: MitigationEnv, kind, state: StageState, U, gamma: float) -> float:
    """Certainty-equivalent objective ``sum_j gamma^j E[R_j]`` along ``U``."""
    kind = RewardKind.parse(kind)
    n, K = env.n, env.K
    mM, fF, ysM, ysF, _ = _stage_quantities(env, state, np.asarray(U, float))
    total = 0.0
    for j in range(len(U)):
        if kind is RewardKind.CORRELATION:
            r = mM[j] @ K @ fF[j] / n
        else:
            p, q = env.ctx.variance_weights(K)
            d = mM[j] - fF[j]
            var = p @ (env.model.mu_M + U[j]) + q @ ysM[j] + p @ env.model.mu_F + q @ ysF[j]
            r = -(d @ K @ d + var) / n
        total += gamma ** j * r
    return float(total)


def plan_open_loop(env: MitigationEnv, kind, state: StageState, horizon: int, gamma: float,
                   tol: float = 1e-6, max_sweeps: int = 100) -> Plan:
    """Maximize the certainty-equivalent ``horizon``-stage objective.

    Block-coordinate ascent: each stage's action is re-optimized with the
    others fixed (its effect on later stages enters through the expected
    carry) until a sweep gains less than ``tol``.
    """
    kind = RewardKind.parse(kind)
    n, K, ctx = env.n, env.K, env.ctx
    Gm, Ups, ED = ctx.Gamma, ctx.Upsilon, ctx.exp_delta
    fs = [env.feasible(state.k + j) for j in range(horizon)]
    U = np.zeros((horizon, n))
    value = plan_value(env, kind, state, U, gamma)
    if kind is RewardKind.DIFFERENCE:
        p, q = ctx.variance_weights(K)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        old = value
        for k in range(horizon):
            U0 = U.copy()
            U0[k] = 0.0
            mM, fF, _, _, carry_map = _stage_quantities(env, state, U0)
            # sensitivities of stage-j counts and carries to u^k
            T, Yd = {k: Gm}, {}
            prop = carry_map
            for j in range(k + 1, horizon):
                Yd[j] = prop
                T[j] = Ups @ prop
                prop = ED @ prop
            g = np.zeros(n)
            Q = np.zeros((n, n))
            for j in range(k, horizon):
                wj = gamma ** j
                if kind is RewardKind.CORRELATION:
                    g += wj * T[j].T @ (K @ fF[j]) / n
                else:
                    g -= wj * 2.0 * T[j].T @ (K @ (mM[j] - fF[j])) / n
                    Q -= wj * T[j].T @ K @ T[j] / n
                    g -= wj * (p if j == k else Yd[j].T @ q) / n
            if kind is RewardKind.CORRELATION:
                U[k] = solve_linear(g, fs[k])
            else:
                U[k] = solve_concave_qp(g, Q, fs[k])
        value = plan_value(env, kind, state, U, gamma)
        if value - old < tol:
            converged = True
            break
    if not converged:
        warnings.warn("open-loop planner did not converge", RuntimeWarning)
    return Plan(U, value, sweeps, converged)


def opl_policy(env: MitigationEnv, kind, K: int, gamma: float,
               state: StageState | None = None) -> np.ndarray:
    """Open-loop interventions for stages ``0..K-1`` planned at the start."""
    state = env.zero_state() if state is None else state
    return plan_open_loop(env, kind, state, K, gamma).U


def cec_policy(env: MitigationEnv, kind, state: StageState, gamma: float, horizon: int = 2) -> np.ndarray:
    """First action of the certainty-equivalent ``horizon``-stage plan."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    return plan_open_loop(env, kind, state, horizon, gamma).U[0]
