"""Small dense linear-algebra and assignment kernels.

Everything here is deterministic and works on plain ``numpy`` arrays.  The
decompositions delegate to LAPACK through ``numpy.linalg``; the tridiagonal
solver and the Hungarian assignment are implemented directly.
"""

from collections import namedtuple

import numpy as np

from .errors import DegenerateBasisError, InvalidInputError

SvdResult = namedtuple("SvdResult", ["u", "singular_values", "vt"])

#: Relative singular-value floor below which a matrix counts as rank deficient.
RANK_TOL = 1e-10


def _as_finite_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def svd(m):
    """Thin singular value decomposition ``m = U diag(s) Vt``.

    Singular values are returned in descending order.
    """
    m = _as_finite_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdResult(u, s, vt)


def pseudoinverse(m, rtol=RANK_TOL):
    """Left pseudoinverse ``(m^T m)^{-1} m^T`` of a full-column-rank matrix.

    Raises
    ------
    DegenerateBasisError
        If the smallest singular value is below ``rtol`` times the largest.
    """
    m = _as_finite_matrix(m)
    if m.shape[0] < m.shape[1]:
        raise DegenerateBasisError(
            f"matrix of shape {m.shape} cannot have full column rank", sigma_min=0.0
        )
    u, s, vt = svd(m)
    if s[-1] <= rtol * s[0]:
        raise DegenerateBasisError(
            f"matrix is rank deficient: sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e}",
            sigma_min=float(s[-1]),
        )
    return (vt.T / s) @ u.T


def solve_tridiagonal(diag, off, rhs):
    """Solve a symmetric tridiagonal system with the Thomas algorithm.

    Parameters
    ----------
    diag : array of shape (n,)
        Main diagonal.
    off : array of shape (n - 1,)
        Sub- (and super-) diagonal.
    rhs : array of shape (n,) or (n, m)
        Right-hand side(s); several columns are solved in one sweep.

    Returns
    -------
    ndarray with the shape of ``rhs``.

    The elimination does no pivoting, so the matrix should be diagonally
    dominant (true for ``c I + lam D^T D`` with ``c > 0``).
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = diag.shape[0]
    if diag.ndim != 1 or n < 1:
        raise InvalidInputError("diag must be a non-empty vector")
    if off.shape != (n - 1,):
        raise InvalidInputError(f"off must have length {n - 1}, got {off.shape}")
    if rhs.shape[0] != n or rhs.ndim > 2:
        raise InvalidInputError(f"rhs must have leading dimension {n}, got {rhs.shape}")

    c_prime = np.empty(max(n - 1, 0))
    d_prime = np.empty_like(rhs)
    denom = diag[0]
    if n > 1:
        c_prime[0] = off[0] / denom
    d_prime[0] = rhs[0] / denom
    for i in range(1, n):
        denom = diag[i] - off[i - 1] * c_prime[i - 1]
        if i < n - 1:
            c_prime[i] = off[i] / denom
        d_prime[i] = (rhs[i] - off[i - 1] * d_prime[i - 1]) / denom

    x = np.empty_like(rhs)
    x[-1] = d_prime[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d_prime[i] - c_prime[i] * x[i + 1]
    return x


def symmetric_eigendecomposition(m, atol=1e-10):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    m = _as_finite_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"matrix must be square, got {m.shape}")
    if np.max(np.abs(m - m.T)) > atol * max(1.0, np.max(np.abs(m))):
        raise InvalidInputError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vals, vecs


def optimal_assignment(cost):
    """Minimum-cost perfect matching on a square cost matrix (Hungarian method).

    Returns
    -------
    perm : ndarray of int
        ``perm[i]`` is the column assigned to row ``i``.
    """
    cost = _as_finite_matrix(cost, "cost")
    n, m = cost.shape
    if n != m:
        raise InvalidInputError(f"cost matrix must be square, got {cost.shape}")

    # Shortest augmenting path with row/column potentials; index 0 is a sentinel.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    perm = np.empty(n, dtype=int)
    perm[match[1:] - 1] = np.arange(n)
    return perm
