"""Maximizers over the per-stage feasible set

    U = {u : c @ u <= C, 0 <= u <= alpha, u_i = 0 off the mitigator mask}.

Objectives have the form ``g @ u + u @ Q @ u`` with ``Q`` negative
semidefinite (``Q = 0`` for the linear case).
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeasibleSet:
    """Prices ``c``, total budget ``C``, caps ``alpha`` and mitigator mask."""

    c: np.ndarray
    C: float
    alpha: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        n = len(alpha)
        c = np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy()
        mask = np.ones(n, bool) if self.mask is None else np.asarray(self.mask, dtype=bool).reshape(n)
        if self.C < 0 or (alpha < 0).any():
            raise ValueError("budget and caps must be nonnegative")
        if (c[mask] <= 0).any():
            raise ValueError("prices must be positive on mitigators")
        cap = np.where(mask, alpha, 0.0)
        for name, val in (("c", c), ("alpha", alpha), ("mask", mask), ("cap", cap)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "C", float(self.C))

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(self.mask & (self.cap > 0))

    def is_feasible(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        return bool((u >= -tol).all() and (u <= self.cap + tol).all()
                    and self.c @ u <= self.C + tol)

    def with_budget(self, C: float) -> "FeasibleSet":
        return FeasibleSet(self.c, C, self.alpha, self.mask)

    def to_dict(self) -> dict:
        return {"c": self.c.tolist(), "C": self.C, "alpha": self.alpha.tolist(),
                "mask": self.mask.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeasibleSet":
        return cls(d["c"], d["C"], d["alpha"], np.asarray(d["mask"], dtype=bool))


def project_feasible(u_raw, feasible: FeasibleSet, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto the feasible set.

    Clip to the box; if the budget is violated, find the multiplier ``lam``
    with ``c @ clip(u_raw - lam c) = C`` by bisection.
    """
    u_raw = np.asarray(u_raw, dtype=float)
    c, cap, C = feasible.c, feasible.cap, feasible.C
    u = np.clip(u_raw, 0.0, cap)
    if c @ u <= C:
        return u
    lo, hi = 0.0, float(np.max(np.where(feasible.mask, u_raw / c, 0.0)))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if c @ np.clip(u_raw - mid * c, 0.0, cap) > C:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    # exact multiplier on the active pattern found by bisection
    lam = hi
    v = u_raw - lam * c
    inner = (v > 0) & (v < cap)
    if inner.any():
        at_cap = v >= cap
        exact = (c[inner] @ u_raw[inner] + c[at_cap] @ cap[at_cap] - C) / (c[inner] @ c[inner])
        if lo <= exact <= hi:
            lam = exact
    return np.clip(u_raw - lam * c, 0.0, cap)


def solve_linear(g, feasible: FeasibleSet) -> np.ndarray:
    """Fractional-knapsack maximizer of ``g @ u``.

    Mitigators with positive ``g`` are filled to their cap in decreasing
    order of ``g_i / c_i`` (ties by node index) until the budget runs out.
    """
    g = np.asarray(g, dtype=float)
    u = np.zeros(feasible.n)
    cand = feasible.free
    cand = cand[g[cand] > 0]
    if len(cand) == 0:
        return u
    order = cand[np.argsort(-(g[cand] / feasible.c[cand]), kind="stable")]
    budget = feasible.C
    for i in order:
        if budget <= 0:
            break
        take = min(feasible.cap[i], budget / feasible.c[i])
        u[i] = take
        budget -= take * feasible.c[i]
    return project_feasible(u, feasible)


@dataclass
class QPResult:
    u: np.ndarray
    value: float
    n_iter: int
    converged: bool


def solve_concave_qp(g, Q, feasible: FeasibleSet, u0=None, tol: float = 1e-6,
                     max_iter: int = 10_000, full_output: bool = False):
    """Maximize ``g @ u + u @ Q @ u`` over the feasible set.

    Accelerated projected gradient ascent with backtracking on the free
    coordinates.  Stops when the projected-gradient norm drops below
    ``tol``; otherwise returns the best iterate with ``converged=False``.
    """
    g = np.asarray(g, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = feasible.n
    idx = feasible.free
    if len(idx) == 0:
        res = QPResult(np.zeros(n), 0.0, 0, True)
        return res if full_output else res.u
    gs = g[idx]
    Qs = 0.5 * (Q[np.ix_(idx, idx)] + Q[np.ix_(idx, idx)].T)
    sub = FeasibleSet(feasible.c[idx], feasible.C, feasible.cap[idx])

    f = lambda x: gs @ x + x @ Qs @ x
    grad = lambda x: gs + 2.0 * Qs @ x
    lip = 2.0 * np.linalg.norm(Qs, 2)
    step = 1.0 / lip if lip > 0 else max(sub.cap.max(), 1e-12) / max(np.abs(gs).max(), 1e-12) * 10
    x = project_feasible(np.zeros(len(idx)) if u0 is None else np.asarray(u0, float)[idx], sub)
    fx = f(x)
    best, fbest = x, fx
    yk, tk = x.copy(), 1.0
    f_mark = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gy = grad(yk)
        fy = f(yk)
        while True:
            x_new = project_feasible(yk + step * gy, sub)
            d = x_new - yk
            if f(x_new) >= fy + gy @ d - (0.5 / step) * d @ d - 1e-15 * max(1.0, abs(fy)):
                break
            step *= 0.5
        f_new = f(x_new)
        if f_new < fx:  # restart momentum on non-monotone step
            yk, tk = x.copy(), 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        yk = x_new + ((tk - 1.0) / t_next) * (x_new - x)
        x, fx, tk = x_new, f_new, t_next
        if fx > fbest:
            best, fbest = x, fx
        gx = grad(x)
        unit = 1.0 / lip if lip > 0 else 1.0
        pg = (project_feasible(x + unit * gx, sub) - x) / unit
        if np.linalg.norm(pg) < tol:
            converged = True
            break
        # stalled at the floating-point floor of the projection
        if it % 50 == 0:
            if fbest - f_mark <= 1e-15 * max(1.0, abs(fbest)):
                converged = True
                break
            f_mark = fbest
    if not converged:
        warnings.warn("solve_concave_qp hit max_iter; returning best iterate", RuntimeWarning)
    u = np.zeros(n)
    u[idx] = best
    res = QPResult(u, float(fbest), it, converged)
    return res if full_output else u


def grid_search(objective, feasible: FeasibleSet, step: float = 0.01, refine: int = 0):
    """Brute-force maximizer over a grid on the free coordinates.

    ``objective`` maps an (m, n) array of candidates to m values.  Each
    ``refine`` round repeats the search on a 10x finer grid around the
    incumbent.  Intended as a test oracle for up to three free coordinates.
    """
    idx = feasible.free
    n = feasible.n
    if len(idx) == 0:
        u = np.zeros(n)
        return u, float(objective(u[None])[0])
    lo = np.zeros(len(idx))
    hi = feasible.cap[idx]
    h = step
    best_u = np.zeros(n)
    for _ in range(refine + 1):
        axes = [np.unique(np.clip(np.append(np.arange(l, u + 1e-12, h), u), l, u))
                for l, u in zip(lo, hi)]
        pts = np.array(list(itertools.product(*axes)))
        U = np.zeros((len(pts), n))
        U[:, idx] = pts
        U = U[U @ feasible.c <= feasible.C + 1e-12]
        vals = objective(U)
        k = int(np.argmax(vals))
        best_u = U[k]
        lo = np.maximum(best_u[idx] - h, 0.0)
        hi = np.minimum(best_u[idx] + h, feasible.cap[idx])
        h /= 10.0
    return best_u, float(objective(best_u[None])[0])
