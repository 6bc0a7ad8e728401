"""Multivariate Hawkes process with exponential kernel.

Influence convention used throughout the package: ``A[i, j]`` is the jump in
node ``j``'s intensity caused by an event at node ``i``.  In vector form the
intensity therefore reads

    lambda(t) = mu + u + A.T @ sum_{s < t} exp(-omega (t - s)) e_{i_s}

so ``A.T`` is the matrix acting on intensities.  :func:`intensity_matrix` is
the single conversion point.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

TAGS = ("F", "M")


class UnstableModelError(ValueError):
    pass


def spectral_radius(A, omega: float = 1.0, tol: float = 1e-8, max_iter: int = 5_000) -> float:
    """Spectral radius of ``A / omega`` by power iteration.

    ``A`` is nonnegative, so Perron-Frobenius guarantees a nonnegative
    dominant eigenvalue.  A small multiple of the identity is added to break
    periodicity (e.g. for cyclic graphs) and removed afterwards.  Nearly
    reducible graphs can make the iteration crawl; if it stalls or its
    eigen-residual stays large, a dense eigenvalue solve is used instead.
    """
    M = np.asarray(A, dtype=float) / omega
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    shift = 1.0
    S = M + shift * np.eye(n)
    x = np.ones(n) / np.sqrt(n)
    converged = False
    est = 0.0
    for _ in range(max_iter):
        y = S @ x
        x = y / np.linalg.norm(y)
        Sx = S @ x
        est = float(x @ Sx)
        # eigen-residual, not the step size: slow geometric convergence fools the latter
        if np.linalg.norm(Sx - est * x) <= tol * est:
            converged = True
            break
        x = Sx / np.linalg.norm(Sx)
    if not converged:
        log.debug("power iteration stalled; using a dense eigenvalue solve")
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    return max(est - shift, 0.0)


@dataclass(frozen=True)
class NetworkModel:
    """Directed influence network shared by the fake and mitigation processes.

    Parameters
    ----------
    A : (n, n) array
        Nonnegative excitation matrix, ``A[i, j]`` = influence of node i on j.
    omega : float
        Kernel decay rate.
    mu_F, mu_M : (n,) arrays
        Exogenous intensities of the fake and mitigation processes.
    B : (n, n) 0/1 array
        Follower adjacency, ``B[i, j] = 1`` iff user i follows user j.
        Defaults to the identity.
    """

    A: np.ndarray
    omega: float
    mu_F: np.ndarray
    mu_M: np.ndarray
    B: np.ndarray = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n):
            raise ValueError("A must be square")
        mu_F = np.array(self.mu_F, dtype=float).reshape(n)
        mu_M = np.array(self.mu_M, dtype=float).reshape(n)
        B = np.eye(n) if self.B is None else np.array(self.B, dtype=float)
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if (A < 0).any() or (mu_F < 0).any() or (mu_M < 0).any():
            raise ValueError("A and mu must be nonnegative")
        if B.shape != (n, n) or not np.all(np.diag(B) == 1):
            raise ValueError("B must be n x n with unit diagonal")
        rho = spectral_radius(A, self.omega)
        if rho >= 1.0:
            raise UnstableModelError(f"spectral radius of A/omega is {rho:.4f} >= 1")
        for name, arr in (("A", A), ("mu_F", mu_F), ("mu_M", mu_M), ("B", B)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def mu(self, tag: str) -> np.ndarray:
        return self.mu_F if tag == "F" else self.mu_M

    def intensity_matrix(self) -> np.ndarray:
        """Excitation matrix in the orientation acting on intensity vectors."""
        return self.A.T

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "omega": self.omega,
            "A": self.A.tolist(),
            "mu_F": self.mu_F.tolist(),
            "mu_M": self.mu_M.tolist(),
            "B": [np.flatnonzero(row).tolist() for row in self.B],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        n = int(d["n"])
        B = np.zeros((n, n))
        for i, cols in enumerate(d["B"]):
            B[i, cols] = 1.0
        return cls(A=np.array(d["A"], dtype=float).reshape(n, n), omega=d["omega"],
                   mu_F=d["mu_F"], mu_M=d["mu_M"], B=B)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "NetworkModel":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class EventLog:
    """Time-ordered events ``(t, node, tag)`` on the window ``[t_start, t_end)``."""

    times: np.ndarray
    nodes: np.ndarray
    tags: np.ndarray
    t_start: float = 0.0
    t_end: float = np.inf

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1)
        tags = np.asarray(self.tags, dtype="<U1").reshape(-1)
        if not (len(times) == len(nodes) == len(tags)):
            raise ValueError("times, nodes and tags must have equal length")
        if len(times):
            if np.any(np.diff(times) < 0):
                raise ValueError("event times must be nondecreasing")
            if times[0] < self.t_start or times[-1] > self.t_end:
                raise ValueError("event outside the log window")
            if nodes.min() < 0:
                raise ValueError("negative node index")
            if not np.isin(tags, TAGS).all():
                raise ValueError("tags must be 'F' or 'M'")
        for name, arr in (("times", times), ("nodes", nodes), ("tags", tags)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, t_start=0.0, t_end=np.inf) -> "EventLog":
        return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype="<U1"), t_start, t_end)

    def __len__(self) -> int:
        return len(self.times)

    def select(self, tag: str | None) -> "EventLog":
        if tag is None:
            return self
        keep = self.tags == tag
        return EventLog(self.times[keep], self.nodes[keep], self.tags[keep], self.t_start, self.t_end)

    def counts(self, n: int, tag: str | None = None, t0: float | None = None,
               t1: float | None = None) -> np.ndarray:
        """Per-node event counts, optionally restricted to a tag and ``[t0, t1)``."""
        keep = np.ones(len(self), dtype=bool)
        if tag is not None:
            keep &= self.tags == tag
        if t0 is not None:
            keep &= self.times >= t0
        if t1 is not None:
            keep &= self.times < t1
        return np.bincount(self.nodes[keep], minlength=n).astype(float)

    @staticmethod
    def merge(logs: Sequence["EventLog"]) -> "EventLog":
        """Stable merge by time; equal times keep the order of ``logs``."""
        if not logs:
            return EventLog.empty()
        times = np.concatenate([lg.times for lg in logs])
        order = np.argsort(times, kind="stable")
        return EventLog(times[order],
                        np.concatenate([lg.nodes for lg in logs])[order],
                        np.concatenate([lg.tags for lg in logs])[order],
                        min(lg.t_start for lg in logs), max(lg.t_end for lg in logs))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"t_start": self.t_start, "t_end": self.t_end})]
        lines += [json.dumps({"t": float(t), "node": int(i), "tag": str(g)})
                  for t, i, g in zip(self.times, self.nodes, self.tags)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, events = rows[0], rows[1:]
        return cls([e["t"] for e in events], [e["node"] for e in events],
                   [e["tag"] for e in events], head["t_start"], head["t_end"])


@dataclass(frozen=True)
class HistoryCarry:
    """Residual endogenous intensity ``y`` at a stage boundary."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if (y < 0).any():
            raise ValueError("carry must be nonnegative")
        object.__setattr__(self, "y", y)

    @classmethod
    def zeros(cls, n: int) -> "HistoryCarry":
        return cls(np.zeros(n))


def _as_vec(x, n, default=0.0):
    if x is None:
        return np.full(n, default)
    if isinstance(x, HistoryCarry):
        return x.y
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()


def excitation_state(model: NetworkModel, log: EventLog, tag: str | None, carry, t: float,
                     strict: bool = True) -> np.ndarray:
    """Endogenous part of the intensity at ``t``: decayed carry plus kernel sum.

    With ``strict`` only events with ``s < t`` contribute (left limit).
    """
    n, w = model.n, model.omega
    y = _as_vec(carry, n)
    sub = log.select(tag)
    mask = sub.times < t if strict else sub.times <= t
    s, i = sub.times[mask], sub.nodes[mask]
    out = y * np.exp(-w * (t - log.t_start))
    if len(s):
        weights = np.exp(-w * (t - s))
        out = out + np.bincount(i, weights=weights, minlength=n) @ model.A
    return out


def conditional_intensity(model: NetworkModel, log: EventLog, tag: str, carry=None, u=None,
                          t: float = 0.0) -> np.ndarray:
    """Intensity vector of the ``tag`` process at time ``t``.

    ``lambda_j(t) = mu_j + u_j + y_j exp(-omega (t - t_start))
    + sum_{(s, i): s < t} A[i, j] exp(-omega (t - s))``.
    """
    if not (log.t_start <= t <= log.t_end):
        raise ValueError(f"t={t} outside [{log.t_start}, {log.t_end}]")
    n = model.n
    u = _as_vec(u, n)
    if (u < 0).any():
        raise ValueError("intervention must be nonnegative")
    return model.mu(tag) + u + excitation_state(model, log, tag, carry, t)


def simulate_stage(model: NetworkModel, tag: str, carry=None, u=None,
                   window: tuple[float, float] = (0.0, 1.0), seed=None,
                   mu: np.ndarray | None = None) -> EventLog:
    """Exact sample of one process on ``[t0, t1)`` by Ogata thinning.

    The dominating rate is the total intensity at the current time, which is
    valid until the next candidate because the kernel only decays between
    events.  ``mu`` overrides the model's exogenous rate for ``tag``.
    """
    t0, t1 = map(float, window)
    n, w, A = model.n, model.omega, model.A
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    base = (model.mu(tag) if mu is None else np.asarray(mu, float)) + _as_vec(u, n)
    if (base < 0).any():
        raise ValueError("exogenous rate plus intervention must be nonnegative")
    exc = _as_vec(carry, n).astype(float)
    base_total = base.sum()
    times, nodes = [], []
    t = t0
    while True:
        bound = base_total + exc.sum()
        if bound <= 0.0:
            break
        t_new = t + rng.exponential(1.0 / bound)
        if t_new >= t1:
            break
        exc *= np.exp(-w * (t_new - t))
        t = t_new
        lam = base + exc
        total = lam.sum()
        if rng.uniform() * bound <= total:
            # inverse-cdf pick; first index wins on exact ties
            j = int(np.searchsorted(np.cumsum(lam), rng.uniform() * total, side="right"))
            j = min(j, n - 1)
            times.append(t)
            nodes.append(j)
            exc += A[j]
    return EventLog(np.array(times), np.array(nodes, dtype=np.int64),
                    np.full(len(times), tag, dtype="<U1"), t0, t1)


def carry_at_end(model: NetworkModel, log: EventLog, tag: str, carry=None) -> np.ndarray:
    """Residual endogenous intensity at ``log.t_end`` (the next stage's carry)."""
    return excitation_state(model, log, tag, carry, log.t_end, strict=True)


def compensator(model: NetworkModel, log: EventLog, tag: str, carry=None, u=None,
                t: float | None = None) -> np.ndarray:
    """Per-node integrated intensity over ``[t_start, t)`` in closed form."""
    n, w = model.n, model.omega
    t = log.t_end if t is None else t
    T = t - log.t_start
    y = _as_vec(carry, n)
    out = (model.mu(tag) + _as_vec(u, n)) * T + y * (1.0 - np.exp(-w * T)) / w
    sub = log.select(tag)
    keep = sub.times < t
    if keep.any():
        mass = (1.0 - np.exp(-w * (t - sub.times[keep]))) / w
        out = out + np.bincount(sub.nodes[keep], weights=mass, minlength=n) @ model.A
    return out


def _event_intensities(A, omega, base, y, times, nodes, t_start):
    """Intensity of the firing node at every event time (left limit), O(N n)."""
    n = A.shape[0]
    exc = np.array(y, dtype=float)
    t_prev = t_start
    out = np.empty(len(times))
    for k, (t, i) in enumerate(zip(times, nodes)):
        exc *= np.exp(-omega * (t - t_prev))
        out[k] = base[i] + exc[i]
        exc += A[i]
        t_prev = t
    return out


def log_likelihood(model: NetworkModel, log: EventLog, tag: str, carry=None, u=None) -> float:
    """Point-process log-likelihood of the ``tag`` events in ``log``.

    Returns ``-inf`` (with a warning) when some event has zero intensity.
    """
    n = model.n
    sub = log.select(tag)
    if not np.isfinite(log.t_end):
        raise ValueError("log window must be finite")
    base = model.mu(tag) + _as_vec(u, n)
    lam = _event_intensities(model.A, model.omega, base, _as_vec(carry, n),
                             sub.times, sub.nodes, log.t_start)
    if (lam <= 0).any():
        k = int(np.flatnonzero(lam <= 0)[0])
        warnings.warn(f"zero intensity at event {k} (t={sub.times[k]}, node={sub.nodes[k]})",
                      RuntimeWarning)
        return -np.inf
    return float(np.log(lam).sum() - compensator(model, log, tag, carry, u).sum())


# -- maximum likelihood ----------------------------------------------------

@dataclass
class FitResult:
    A: np.ndarray
    mu: np.ndarray
    loglik: float
    initial_loglik: float
    n_iter: int
    converged: bool
    history: list = field(default_factory=list)


def _sufficient_stats(logs, n, omega, tag, carries, interventions):
    """Per-event regressors for the concave per-target likelihood.

    For an event at node j the intensity is ``mu_j + off + R @ A[:, j]``
    where ``R[k] = sum_{s<t at k} exp(-omega (t - s))`` and ``off`` collects
    carry and intervention.  The compensator of node j is
    ``mu_j * T + Q @ A[:, j] + const``.
    """
    R_rows, tgt, off = [], [], []
    T_total = 0.0
    Q = np.zeros(n)
    const = np.zeros(n)
    for idx, lg in enumerate(logs):
        sub = lg.select(tag)
        y = _as_vec(None if carries is None else carries[idx], n)
        u = _as_vec(None if interventions is None else interventions[idx], n)
        T = lg.t_end - lg.t_start
        T_total += T
        const += u * T + y * (1.0 - np.exp(-omega * T)) / omega
        Q += np.bincount(sub.nodes, weights=(1.0 - np.exp(-omega * (lg.t_end - sub.times))) / omega,
                         minlength=n)
        state = np.zeros(n)
        t_prev = lg.t_start
        for t, i in zip(sub.times, sub.nodes):
            state *= np.exp(-omega * (t - t_prev))
            R_rows.append(state.copy())
            tgt.append(i)
            off.append(u[i] + y[i] * np.exp(-omega * (t - lg.t_start)))
            state[i] += 1.0
            t_prev = t
    R = np.array(R_rows).reshape(-1, n)
    return R, np.array(tgt, dtype=np.int64), np.array(off), T_total, Q, const


def fit_mle(logs: Iterable[EventLog], n: int, omega: float, tag: str | None = None,
            carries=None, interventions=None, A_fixed: np.ndarray | None = None,
            max_iter: int = 5000, tol: float = 1e-8) -> FitResult:
    """Maximum-likelihood ``(A, mu)`` with ``omega`` held fixed.

    Projected gradient ascent with Barzilai-Borwein steps and backtracking,
    run independently for each target node (the likelihood separates by
    column of ``A``).  Initialization: ``mu`` = empirical rate, ``A = 0``.
    If ``A_fixed`` is given only ``mu`` is estimated.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("need at least one log")
    R, tgt, off, T, Q, const = _sufficient_stats(logs, n, omega, tag, carries, interventions)
    counts = np.bincount(tgt, minlength=n).astype(float)
    fit_A = A_fixed is None
    A = np.zeros((n, n)) if fit_A else np.array(A_fixed, dtype=float)
    mu = counts / T

    def column_ll(j, mu_j, a_j):
        rows = tgt == j
        lam = mu_j + off[rows] + R[rows] @ a_j
        if (lam <= 0).any():
            return -np.inf
        return np.log(lam).sum() - mu_j * T - Q @ a_j - const[j]

    def column_grad(j, mu_j, a_j):
        rows = tgt == j
        inv = 1.0 / (mu_j + off[rows] + R[rows] @ a_j)
        return np.concatenate([[inv.sum() - T], R[rows].T @ inv - Q])

    total0 = sum(column_ll(j, mu[j], A[:, j]) for j in range(n))
    converged = True
    iters = 0
    for j in range(n):
        if counts[j] == 0:
            # rate MLE with no events is zero; excitation into j unidentified -> 0
            mu[j] = 0.0
            if fit_A:
                A[:, j] = 0.0
            continue
        x = np.concatenate([[mu[j]], A[:, j]])
        f = column_ll(j, x[0], x[1:])
        g = column_grad(j, x[0], x[1:])
        if not fit_A:
            g[1:] = 0.0
        step = 1.0 / max(np.abs(g).max(), 1.0) * max(mu[j], 1e-3)
        ok = False
        for it in range(max_iter):
            while True:
                x_new = np.maximum(x + step * g, 0.0)
                f_new = column_ll(j, x_new[0], x_new[1:])
                if f_new >= f + 1e-4 * g @ (x_new - x) or step < 1e-16:
                    break
                step *= 0.5
            g_new = column_grad(j, x_new[0], x_new[1:]) if np.isfinite(f_new) else g
            if not fit_A:
                g_new[1:] = 0.0
            s, dg = x_new - x, g_new - g
            pg = np.maximum(x_new + g_new, 0.0) - x_new  # projected-gradient residual
            done = np.linalg.norm(pg) <= tol * max(1.0, abs(f_new)) or abs(f_new - f) <= 1e-13 * max(1.0, abs(f))
            if f_new >= f:
                x, f, g = x_new, f_new, g_new
            if done:
                ok = True
                break
            sy = s @ dg
            step = float(-(s @ s) / sy) if sy < 0 else step * 2.0
            step = min(max(step, 1e-12), 1e6)
        iters = max(iters, it + 1)
        converged &= ok
        mu[j] = x[0]
        if fit_A:
            A[:, j] = x[1:]
    total = sum(column_ll(j, mu[j], A[:, j]) for j in range(n))
    if not converged:
        warnings.warn("fit_mle reached max_iter before convergence", RuntimeWarning)
    return FitResult(A=A, mu=mu, loglik=float(total), initial_loglik=float(total0),
                     n_iter=iters, converged=converged)
