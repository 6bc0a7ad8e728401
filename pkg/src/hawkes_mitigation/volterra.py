"""Trapezoidal solver for matrix-valued Volterra equations of the second kind.

Solves, on the uniform grid ``t_m = m h``,

    X(t) = F(t) + int_0^t K(t - s) X(s) ds

with ``K(t)`` an (n, n) kernel and ``X``, ``F`` of shape (n, p).  The
trapezoid rule gives

    X_m = F_m + h [K_m X_0 / 2 + sum_{k=1}^{m-1} K_{m-k} X_k + K_0 X_m / 2],

which is implicit only through the ``K_0 X_m`` term.  The global error is
O(h^2) for smooth kernels.
"""
import numpy as np


def solve_volterra(kernel, forcing, h):
    """Solve the discretized equation.

    Parameters
    ----------
    kernel : array, shape (M + 1, n, n)
        ``K(t_m)`` for ``m = 0..M``.
    forcing : array, shape (M + 1, n, p) or (M + 1, n)
        ``F(t_m)``.
    h : float
        Grid spacing.

    Returns
    -------
    X : array with the shape of ``forcing``
    """
    K = np.asarray(kernel, dtype=float)
    F = np.asarray(forcing, dtype=float)
    vector = F.ndim == 2
    if vector:
        F = F[:, :, None]
    M1, n, p = F.shape
    if K.shape != (M1, n, n):
        raise ValueError("kernel and forcing grids differ")
    X = np.empty_like(F)
    X[0] = F[0]
    lhs = np.eye(n) - 0.5 * h * K[0]
    # reversed kernel laid out so that K_{m-k}, k = 1..m-1, is a contiguous block
    Krev = K[::-1]
    Kflat = np.ascontiguousarray(Krev.transpose(1, 0, 2)).reshape(n, M1 * n)
    M = M1 - 1
    for m in range(1, M1):
        rhs = F[m] + 0.5 * h * K[m] @ X[0]
        if m > 1:
            lo, hi = (M - m + 1) * n, M * n
            rhs = rhs + h * Kflat[:, lo:hi] @ X[1:m].reshape((m - 1) * n, p)
        X[m] = np.linalg.solve(lhs, rhs)
    return X[:, :, 0] if vector else X


def grid(t_max, h):
    """Uniform grid ``0, h, ..., t_max`` (``t_max`` must be a multiple of ``h``)."""
    M = int(round(t_max / h))
    if not np.isclose(M * h, t_max, rtol=0, atol=1e-9 * max(1.0, t_max)):
        raise ValueError("t_max must be an integer multiple of h")
    return np.arange(M + 1) * h
