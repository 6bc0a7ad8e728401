"""Transient first- and second-order statistics of the exponential MHP.

All formulas are for a single stage of length ``delta`` that starts with no
events of its own, a constant exogenous rate ``mu_eff`` (base rate plus
intervention) and a carry ``y`` (residual intensity from earlier stages,
decaying as ``y exp(-omega t)``).  With ``C = A.T - omega I``:

* mean intensity  ``eta(t) = e^{Ct}(mu + y) + omega C^{-1}(e^{Ct} - I) mu``
* stage counts    ``E[z] = Gamma mu + Upsilon y`` with
  ``Upsilon = C^{-1}(e^{C delta} - I)`` and
  ``Gamma = Upsilon + omega C^{-1}(Upsilon - delta I)``
* pair density for ``t > t'``
  ``E[dN(t) dN(t')^T] / dt dt' = G(t - t')^T Sigma(t') + e^{C(t-t')} P(t')
  + eta(t) eta(t')^T`` where ``G(tau) = A e^{(A - omega I) tau}`` is the
  response to a single event, ``Sigma = diag(eta)`` and ``P(t') = Cov
  lambda(t')``.  The ``P`` term carries correlations created by events before
  ``t'``; it vanishes at ``t' = 0``.
"""
from __future__ import annotations

import warnings
from functools import cached_property

import numpy as np
from scipy.linalg import expm, solve_sylvester

from .hawkes_core import NetworkModel
from .volterra import solve_volterra


def simpson_weights(m: int, h: float) -> np.ndarray:
    if m % 2:
        raise ValueError("Simpson rule needs an even number of panels")
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


class MomentContext:
    """Precomputed matrix functions for one network and stage length.

    Parameters
    ----------
    A : (n, n) array
        Excitation matrix in the source-row convention of
        :class:`~hawkes_mitigation.hawkes_core.NetworkModel`.
    omega : float
    delta : float
        Stage length.
    m : int
        Quadrature panels per stage (even).
    """

    def __init__(self, A, omega: float, delta: float, m: int = 64):
        self.A = np.asarray(A, dtype=float)
        self.n = self.A.shape[0]
        self.omega = float(omega)
        self.delta = float(delta)
        self.m = int(m)
        self.I = np.eye(self.n)
        self.C = self.A.T - self.omega * self.I
        self.C_inv = np.linalg.inv(self.C)
        self.exp_delta = expm(self.C * self.delta)
        self.Upsilon = self.C_inv @ (self.exp_delta - self.I)
        self.Gamma = self.Upsilon + self.omega * self.C_inv @ (self.Upsilon - self.delta * self.I)
        self._weights_cache: dict = {}

    @classmethod
    def from_model(cls, model: NetworkModel, delta: float, m: int = 64) -> "MomentContext":
        return cls(model.A, model.omega, delta, m)

    def expC(self, t: float) -> np.ndarray:
        return expm(self.C * t)

    @cached_property
    def stationary_factor(self) -> np.ndarray:
        """``-omega C^{-1}``: maps a constant rate to the stationary mean intensity."""
        return -self.omega * self.C_inv

    def variance_weights(self, K, m: int | None = None, check: bool = False):
        """Vectors ``(p, q)`` with ``tr(K Cov z) = p @ mu_eff + q @ y``.

        ``K`` must be symmetric (``B.T @ B`` in practice).  Results are cached
        per ``K``.
        """
        K = np.asarray(K, dtype=float)
        m = self.m if m is None else m
        key = (K.tobytes(), m)
        if key not in self._weights_cache:
            p, q = _trace_weights(self, K, m)
            if check:
                p2, q2 = _trace_weights(self, K, 2 * m)
                scale = max(np.abs(p2).max(), np.abs(q2).max(), 1e-300)
                err = max(np.abs(p - p2).max(), np.abs(q - q2).max()) / scale
                if err > 1e-3:
                    warnings.warn(f"variance weights Richardson check failed: {err:.2e}",
                                  RuntimeWarning)
            self._weights_cache[key] = (p, q)
        return self._weights_cache[key]


def _vec(x, n):
    return np.zeros(n) if x is None else np.broadcast_to(np.asarray(x, dtype=float), (n,))


# -- first order -------------------------------------------------------------

def mean_intensity(ctx: MomentContext, mu_eff, t: float, y=None) -> np.ndarray:
    """Expected intensity ``eta(t)`` at time ``t`` into the stage."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    mu = _vec(mu_eff, ctx.n)
    E = ctx.expC(t)
    return E @ (mu + _vec(y, ctx.n)) + ctx.omega * ctx.C_inv @ ((E - ctx.I) @ mu)


def window_mean_counts(ctx: MomentContext, mu_eff, y, a: float, b: float) -> np.ndarray:
    """``E[N(b) - N(a)]`` for ``0 <= a <= b``."""
    mu, y = _vec(mu_eff, ctx.n), _vec(y, ctx.n)
    S = ctx.C_inv @ (ctx.expC(b) - ctx.expC(a))  # int_a^b e^{Ct} dt
    return S @ (mu + y) + ctx.omega * ctx.C_inv @ (S @ mu - (b - a) * mu)


def stage_mean_counts(ctx: MomentContext, mu_eff, y=None) -> np.ndarray:
    """``E[z] = Gamma mu_eff + Upsilon y`` over one stage."""
    return ctx.Gamma @ _vec(mu_eff, ctx.n) + ctx.Upsilon @ _vec(y, ctx.n)


def mean_intensity_volterra(ctx: MomentContext, mu_eff, y, t_max: float, h: float):
    """Mean intensity on ``[0, t_max]`` from the renewal equation

    ``eta(t) = mu + y e^{-omega t} + int_0^t A.T e^{-omega (t-s)} eta(s) ds``.
    """
    M = int(round(t_max / h))
    ts = np.arange(M + 1) * h
    decay = np.exp(-ctx.omega * ts)
    kernel = ctx.A.T[None, :, :] * decay[:, None, None]
    forcing = _vec(mu_eff, ctx.n)[None, :] + _vec(y, ctx.n)[None, :] * decay[:, None]
    return ts, solve_volterra(kernel, forcing, h)


# -- response function ---------------------------------------------------------

def response_function(ctx: MomentContext, tau: float, method: str = "closed",
                      h: float = 1e-3) -> np.ndarray:
    """Response ``G(tau)``; entry ``(j, i)`` is the excess rate at ``i`` a lag
    ``tau`` after an event at ``j`` (no other history).

    ``method='closed'`` uses ``A e^{(A - omega I) tau}``; ``method='volterra'``
    solves ``G = G * Phi + Phi`` with ``Phi(t) = A e^{-omega t}`` by the
    trapezoid rule on a grid of step close to ``h``.
    """
    if tau <= 0:
        raise ValueError("lag must be positive; use the symmetry relation for t < t'")
    if method == "closed":
        return ctx.A @ ctx.expC(tau).T
    if method == "volterra":
        M = max(int(np.ceil(tau / h - 1e-9)), 1)
        _, G = response_volterra(ctx, tau, tau / M)
        return G[-1]
    raise ValueError(f"unknown method {method!r}")


def response_volterra(ctx: MomentContext, t_max: float, h: float):
    """Trapezoid solution of the response equation on ``0, h, ..., t_max``.

    Returns the grid and ``G`` of shape (M + 1, n, n).  The equation is
    solved in transposed form ``G^T = Phi^T + int Phi^T(t - s) G^T(s) ds``.
    """
    M = int(round(t_max / h))
    ts = np.arange(M + 1) * h
    PhiT = ctx.A.T[None, :, :] * np.exp(-ctx.omega * ts)[:, None, None]
    GT = solve_volterra(PhiT, PhiT, h)
    return ts, GT.transpose(0, 2, 1)


# -- second order --------------------------------------------------------------

def _path(ctx: MomentContext, mu, y, nodes):
    """Mean intensity and intensity covariance at sorted ``nodes`` (from 0).

    ``P' = C P + P C^T + A^T diag(eta) A`` is advanced exactly for the
    homogeneous part and by Simpson's rule for the source over each gap.
    """
    nodes = np.asarray(nodes, dtype=float)
    n, A = ctx.n, ctx.A
    eta_of = lambda t: mean_intensity(ctx, mu, t, y)
    Q = lambda e: (A.T * e) @ A
    etas = np.array([eta_of(t) for t in nodes])
    Ps = np.zeros((len(nodes), n, n))
    P = np.zeros((n, n))
    t_prev = 0.0
    cache = {}
    for k, t in enumerate(nodes):
        d = t - t_prev
        if d > 0:
            key = round(d, 14)
            if key not in cache:
                cache[key] = (expm(ctx.C * d), expm(ctx.C * d / 2))
            Ed, Eh = cache[key]
            e0 = etas[k - 1] if k > 0 else eta_of(t_prev)
            src = (Ed @ Q(e0) @ Ed.T + 4.0 * Eh @ Q(eta_of(t_prev + d / 2)) @ Eh.T
                   + Q(etas[k])) * d / 6.0
            P = Ed @ P @ Ed.T + src
        Ps[k] = P
        t_prev = t
    return etas, Ps


def intensity_covariance(ctx: MomentContext, mu_eff, y, t: float, m: int | None = None) -> np.ndarray:
    """``Cov(lambda(t))`` for a stage started with deterministic intensity."""
    m = ctx.m if m is None else m
    nodes = np.linspace(0.0, t, m + 1)
    return _path(ctx, _vec(mu_eff, ctx.n), _vec(y, ctx.n), nodes)[1][-1]


def second_order_density(ctx: MomentContext, mu_eff, y, t: float, t_prime: float,
                         history: bool = True, m: int | None = None):
    """Density of ``E[dN(t) dN(t')^T]`` off the diagonal, plus the atom.

    Returns ``(density, atom)``; ``atom`` is ``diag(eta(t'))`` when
    ``t == t'`` and zero otherwise.  For ``t < t'`` the transpose of the
    ``(t', t)`` value is returned, which is the symmetry relation
    ``G(t', t)^T Sigma(t') = Sigma(t) G(t, t')``.  ``history=False`` drops the
    ``e^{C tau} P(t')`` term, leaving the single-event response only.
    """
    if t < 0 or t_prime < 0:
        raise ValueError("times must be nonnegative")
    mu, yv = _vec(mu_eff, ctx.n), _vec(y, ctx.n)
    if t < t_prime:
        dens, atom = second_order_density(ctx, mu, yv, t_prime, t, history, m)
        return dens.T, atom
    eta_t = mean_intensity(ctx, mu, t, yv)
    eta_p = mean_intensity(ctx, mu, t_prime, yv)
    tau = t - t_prime
    if tau == 0:
        D = (ctx.A.T * eta_p)
        if history:
            D = D + intensity_covariance(ctx, mu, yv, t_prime, m)
        D = 0.5 * (D + D.T) + np.outer(eta_t, eta_p)
        return D, np.diag(eta_p)
    G = response_function(ctx, tau)
    D = G.T * eta_p[None, :]
    if history and t_prime > 0:
        D = D + ctx.expC(tau) @ intensity_covariance(ctx, mu, yv, t_prime, m)
    return D + np.outer(eta_t, eta_p), np.zeros((ctx.n, ctx.n))


def _segment_nodes(a, b, m):
    return np.linspace(a, b, m + 1), simpson_weights(m, (b - a) / m)


def count_covariance(ctx: MomentContext, mu_eff, y, I, J, m: int | None = None,
                     history: bool = True) -> np.ndarray:
    """``Cov(N(I), N(J))`` for intervals ``I = (a1, b1)``, ``J = (a2, b2)``.

    The lag integral is done in closed form; the remaining integral over the
    earlier time uses composite Simpson with ``m`` panels per elementary
    piece.
    """
    m = ctx.m if m is None else m
    n = ctx.n
    mu, yv = _vec(mu_eff, n), _vec(y, n)
    (a1, b1), (a2, b2) = I, J
    cuts = np.unique([a1, b1, a2, b2])
    pieces = [(lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi > lo]
    in_I = [p for p in pieces if p[0] >= a1 and p[1] <= b1]
    in_J = [p for p in pieces if p[0] >= a2 and p[1] <= b2]
    needed = sorted({p for p in in_I} | {p for p in in_J})
    # quadrature nodes on every piece that can be an "earlier" piece
    seg = {p: _segment_nodes(p[0], p[1], m) for p in needed}
    h_min = min((p[1] - p[0]) / m for p in needed) if needed else 1.0
    all_nodes = [np.array([0.0])] + [seg[p][0] for p in needed]
    fill_to = max(p[1] for p in needed) if needed else 0.0
    all_nodes.append(np.arange(0.0, fill_to, h_min))
    nodes = np.unique(np.concatenate(all_nodes))
    etas, Ps = _path(ctx, mu, yv, nodes)
    lookup = {float(t): k for k, t in enumerate(nodes)}

    def source(p):
        ts, ws = seg[p]
        idx = [lookup[float(t)] for t in ts]
        S = (ctx.A.T[None, :, :] * etas[idx][:, None, :])
        if history:
            S = S + Ps[idx]
        return ts, ws, S

    def cross(later, earlier):
        # int_earlier dt' int_later dt e^{C(t - t')} S(t')
        ts, ws, S = source(earlier)
        out = np.zeros((n, n))
        for t, w, Sk in zip(ts, ws, S):
            lag_int = ctx.C_inv @ (ctx.expC(later[1] - t) - ctx.expC(later[0] - t))
            out += w * lag_int @ Sk
        return out

    def same(p):
        ts, ws, S = source(p)
        out = np.zeros((n, n))
        for t, w, Sk in zip(ts, ws, S):
            out += w * (ctx.C_inv @ (ctx.expC(p[1] - t) - ctx.I)) @ Sk
        return np.diag(window_mean_counts(ctx, mu, yv, *p)) + out + out.T

    cov = np.zeros((n, n))
    for p in in_I:
        for q in in_J:
            if p == q:
                cov += same(p)
            elif q[1] <= p[0]:
                cov += cross(p, q)
            else:
                cov += cross(q, p).T
    return cov


def stage_second_moment(ctx: MomentContext, mu_eff, y=None, m: int | None = None,
                        history: bool = True, check: bool = False) -> np.ndarray:
    """``E[z z^T]`` of the per-node stage counts.

    ``check`` repeats the computation with ``2m`` panels and warns if the
    relative change exceeds 1e-3.
    """
    m = ctx.m if m is None else m
    mu, yv = _vec(mu_eff, ctx.n), _vec(y, ctx.n)
    cov = count_covariance(ctx, mu, yv, (0.0, ctx.delta), (0.0, ctx.delta), m, history)
    if check:
        cov2 = count_covariance(ctx, mu, yv, (0.0, ctx.delta), (0.0, ctx.delta), 2 * m, history)
        err = np.abs(cov - cov2).max() / max(np.abs(cov2).max(), 1e-300)
        if err > 1e-3:
            warnings.warn(f"second-moment Richardson check failed: {err:.2e}", RuntimeWarning)
    Ez = stage_mean_counts(ctx, mu, yv)
    return cov + np.outer(Ez, Ez)


def _trace_weights(ctx: MomentContext, K, m: int):
    """Adjoint form of ``tr(K Cov z)`` as a linear functional of ``(mu, y)``.

    ``tr(K Cov z) = int_0^delta eta(r) . w(r) dr`` with
    ``w(r) = diag K + 2 diag(K Ups(delta - r) A^T) + 2 diag(A Z(r) A^T)``,
    ``Z(r) = Zh(delta - r)``, ``Zh(T) = Ups(T)^T K C^{-1} e^{CT} - L(T)`` and
    ``L(T) = int_0^T e^{C^T s} K C^{-1} e^{C s} ds`` (a Lyapunov integral).
    """
    n, A, C, Ci = ctx.n, ctx.A, ctx.C, ctx.C_inv
    h = ctx.delta / m
    E1 = expm(C * h)
    E = np.empty((m + 1, n, n))
    E[0] = ctx.I
    for k in range(1, m + 1):
        E[k] = E[k - 1] @ E1
    Ups = np.einsum("ij,kjl->kil", Ci, E - ctx.I)
    M0 = K @ Ci
    L1 = solve_sylvester(C.T, C, E1.T @ M0 @ E1 - M0)
    L = np.zeros((n, n))
    Zh = np.empty((m + 1, n, n))
    for k in range(m + 1):
        Zh[k] = Ups[k].T @ M0 @ E[k] - L
        L = L1 + E1.T @ L @ E1
    dK = np.diag(K).copy()
    w = np.empty((m + 1, n))
    for k in range(m + 1):
        U = Ups[m - k]
        w[k] = dK + 2.0 * np.einsum("ij,ji->i", K @ U, A.T) + 2.0 * np.einsum("jk,jk->j", A @ Zh[m - k], A)
    sw = simpson_weights(m, h)
    Emu = E + ctx.omega * Ups  # maps mu to eta(r) (without carry)
    p = np.einsum("k,kij,ki->j", sw, Emu, w)
    q = np.einsum("k,kij,ki->j", sw, E, w)
    return p, q


def stage_quadratic_form(ctx: MomentContext, K, mu_eff, y=None) -> float:
    """``E[z^T K z]`` via the trace weights (no full covariance matrix)."""
    p, q = ctx.variance_weights(K)
    Ez = stage_mean_counts(ctx, mu_eff, y)
    return float(p @ _vec(mu_eff, ctx.n) + q @ _vec(y, ctx.n) + Ez @ K @ Ez)
