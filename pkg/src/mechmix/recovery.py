"""Recovery of mixing weights from encoded states.

The estimators work in shift coordinates ``(alpha_1, ..., alpha_{m-1})``
of a :class:`~mechmix.basis.DomainBasis`; the baseline weight is restored as
``alpha_0 = 1 - sum(alpha_k)`` before projecting onto the simplex.

* pointwise least squares ``B^+ (zhat_t - mu0)``
* centred moving average (boundary steps keep their raw values)
* quadratic-variation smoothing
  ``min sum ||zhat_t - mu0 - B a_t||^2 + lam sum ||a_{t+1} - a_t||^2``,
  solved exactly by rotating into the eigenbasis of ``B^T B`` and running one
  tridiagonal solve per component
* two-point and anchor-based calibration
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationDegenerateError, InvalidInputError
from .linalg import solve_tridiagonal, symmetric_eigendecomposition

SIMPLEX_TOL = 1e-9
DEFAULT_LAMBDA_GRID = tuple(np.logspace(np.log10(0.1), np.log10(50.0), 25))
CALIBRATION_STEPS = 5


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex.

    Sort-based: with ``u`` sorted descending, ``theta`` is chosen so that
    ``max(v - theta, 0)`` sums to one.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 1:
        raise InvalidInputError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector has non-finite entries")
    flat = v.reshape(-1, v.shape[-1])
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, flat.shape[1] + 1)
    cond = u - css / idx > 0
    rho = flat.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    out = np.maximum(flat - theta[:, None], 0.0)
    # pin the sum against rounding in theta
    out /= out.sum(axis=1, keepdims=True)
    return out.reshape(v.shape)


def lift(shift):
    """Prepend ``alpha_0 = 1 - sum(shift)`` to shift coordinates."""
    shift = np.asarray(shift, dtype=float)
    return np.concatenate([1.0 - shift.sum(axis=-1, keepdims=True), shift], axis=-1)


@dataclass(frozen=True, eq=False)
class SmoothingConfig:
    """How to smooth the pointwise estimates.

    ``mode`` is ``"window"`` (moving average of half-width ``window``) or
    ``"tv"`` (quadratic-variation penalty ``lam``; ``lam=None`` selects it
    by GCV over ``lambda_grid``).
    """

    mode: str = "window"
    window: int = 5
    lam: float = None
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID

    def __post_init__(self):
        if self.mode not in ("window", "tv", "none"):
            raise InvalidInputError(f"unknown smoothing mode {self.mode!r}")
        if self.window < 0:
            raise InvalidInputError("window must be nonnegative")
        if self.lam is not None and self.lam < 0:
            raise InvalidInputError("lambda must be nonnegative")


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    """Recovered mixing weights over the basis domains.

    Alpha arrays have shape ``(T, m)`` in basis order and lie on the simplex.
    ``raw_shift`` and ``smoothed_shift`` keep the unprojected shift
    coordinates, shape ``(T, m - 1)``.
    """

    raw_alphas: np.ndarray
    smoothed_alphas: np.ndarray
    residual_norms: np.ndarray
    raw_shift: np.ndarray
    smoothed_shift: np.ndarray
    domains: tuple = ()
    calibrated_alphas: np.ndarray = None
    lambda_used: float = 0.0
    window_used: int = 0
    warnings: tuple = field(default=())

    def __post_init__(self):
        for name in ("raw_alphas", "smoothed_alphas", "calibrated_alphas"):
            a = getattr(self, name)
            if a is None:
                continue
            if np.any(a < -SIMPLEX_TOL) or np.any(np.abs(a.sum(axis=1) - 1) > SIMPLEX_TOL):
                raise InvalidInputError(f"{name} are not on the simplex")
        if np.any(self.residual_norms < 0):
            raise InvalidInputError("residual norms must be nonnegative")

    @property
    def length(self):
        return self.raw_alphas.shape[0]

    @property
    def best_alphas(self):
        """Calibrated weights if present, else smoothed."""
        return self.smoothed_alphas if self.calibrated_alphas is None else self.calibrated_alphas

    def to_global(self, alphas, K):
        """Embed basis-order weights into ``K`` global domains."""
        out = np.zeros((alphas.shape[0], K))
        out[:, list(self.domains)] = alphas
        return out

    def write_csv(self, path):
        T, m = self.raw_alphas.shape
        cal = self.calibrated_alphas
        if cal is None:
            cal = np.full((T, m), np.nan)
        header = (["t"] + [f"alpha_raw_{k}" for k in self.domains]
                  + [f"alpha_smooth_{k}" for k in self.domains]
                  + [f"alpha_cal_{k}" for k in self.domains] + ["residual_norm"])
        data = np.column_stack([np.arange(T), self.raw_alphas, self.smoothed_alphas, cal,
                                self.residual_norms])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="",
                   fmt=["%d"] + ["%.17g"] * (data.shape[1] - 1))


def _check_encoded(encoded, basis):
    encoded = np.asarray(encoded, dtype=float)
    if encoded.ndim != 2 or encoded.shape[1] != basis.latent_dim:
        raise InvalidInputError(
            f"encoded states must have shape (T, {basis.latent_dim}), got {encoded.shape}")
    if not np.all(np.isfinite(encoded)):
        raise InvalidInputError("encoded states contain non-finite values")
    return encoded


def _result(basis, raw_shift, smoothed_shift, residuals, **kw):
    warnings = (basis.warning,) if basis.warning else ()
    return RecoveryResult(
        raw_alphas=project_simplex(lift(raw_shift)),
        smoothed_alphas=project_simplex(lift(smoothed_shift)),
        residual_norms=residuals,
        raw_shift=raw_shift,
        smoothed_shift=smoothed_shift,
        domains=basis.domains,
        warnings=warnings,
        **kw,
    )


def residual_norms(encoded, basis, shift):
    """``||zhat_t - mu0 - B a_t||`` per step."""
    return np.linalg.norm(encoded - basis.mu0 - shift @ basis.B.T, axis=1)


def recover_pointwise(encoded, basis):
    """Least-squares weights ``B^+ (zhat_t - mu0)`` lifted and projected per step."""
    encoded = _check_encoded(encoded, basis)
    shift = (encoded - basis.mu0) @ basis.pinv().T
    return _result(basis, shift, shift, residual_norms(encoded, basis, shift))


def _moving_average(x, w):
    T = x.shape[0]
    out = x.copy()
    if w == 0:
        return out
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    inner = (csum[2 * w + 1:] - csum[: T - 2 * w]) / (2 * w + 1)
    out[w: T - w] = inner
    return out


def smooth_window(result, w):
    """Centred moving average of half-width ``w`` over the raw weights.

    The first and last ``w`` steps keep their unsmoothed values; averages
    are re-projected onto the simplex.
    """
    w = int(w)
    if w < 0 or 2 * w + 1 > result.length:
        raise InvalidInputError(f"window half-width {w} does not fit T={result.length}")
    smoothed = project_simplex(_moving_average(result.raw_alphas, w))
    return replace(result, smoothed_alphas=smoothed,
                   smoothed_shift=_moving_average(result.raw_shift, w),
                   calibrated_alphas=None, window_used=w, lambda_used=0.0)


def _difference_eigenvalues(T):
    """Eigenvalues of ``D1^T D1`` for the length-``T`` first-difference operator."""
    return 4.0 * np.sin(np.pi * np.arange(T) / (2.0 * T)) ** 2


def _rotated_problem(encoded, basis):
    gram = basis.B.T @ basis.B
    lam_k, U = symmetric_eigendecomposition(gram)
    rhs = (encoded - basis.mu0) @ basis.B @ U
    return lam_k, U, rhs


def _solve_rotated(lam_k, rhs, lam):
    T = rhs.shape[0]
    lap = np.full(T, 2.0)
    lap[0] = lap[-1] = 1.0
    if T == 1:
        lap[:] = 0.0
    beta = np.empty_like(rhs)
    for k, c in enumerate(lam_k):
        beta[:, k] = solve_tridiagonal(c + lam * lap, np.full(T - 1, -lam), rhs[:, k])
    return beta


def tv_objective(encoded, basis, shift, lam):
    """Value of the smoothing objective at shift coordinates ``shift``."""
    data = np.sum(residual_norms(encoded, basis, shift) ** 2)
    return data + lam * np.sum(np.diff(shift, axis=0) ** 2)


def smooth_tv(encoded, basis, lam=None, lambda_grid=DEFAULT_LAMBDA_GRID):
    """Quadratic-variation smoothing, relaxed then projected.

    Solves ``min sum_t ||zhat_t - mu0 - B a_t||^2 + lam sum_t ||a_{t+1} - a_t||^2``
    without the simplex constraint, then projects each step.  ``lam=None``
    picks it from ``lambda_grid`` by GCV.
    """
    encoded = _check_encoded(encoded, basis)
    if encoded.shape[0] < 3:
        raise InvalidInputError("need at least 3 time steps")
    basis.pinv()  # raises on a degenerate basis
    if lam is None:
        lam = select_lambda_gcv(encoded, basis, lambda_grid)
    if lam < 0:
        raise InvalidInputError("lambda must be nonnegative")
    raw_shift = (encoded - basis.mu0) @ basis.pinv().T
    lam_k, U, rhs = _rotated_problem(encoded, basis)
    shift = _solve_rotated(lam_k, rhs, lam) @ U.T
    return _result(basis, raw_shift, shift, residual_norms(encoded, basis, shift),
                   lambda_used=float(lam))


def gcv_score(encoded, basis, lam):
    """``RSS / (n - df)^2`` for the smoother restricted to the column space of ``B``.

    The part of ``zhat_t - mu0`` orthogonal to ``B`` does not depend on
    ``lam`` and need not share the noise level of the in-plane part, so it
    is left out: ``RSS`` is the in-plane residual and ``n = T (m - 1)``.
    ``df`` is the trace of the smoother,
    ``sum_k sum_j lam_k / (lam_k + lam mu_j)`` with ``mu_j`` the eigenvalues
    of ``D1^T D1``.
    """
    encoded = _check_encoded(encoded, basis)
    T = encoded.shape[0]
    lam_k, U, rhs = _rotated_problem(encoded, basis)
    beta = _solve_rotated(lam_k, rhs, lam)
    # coordinates in the orthonormal basis B U diag(lam_k)^(-1/2) of the column space
    root = np.sqrt(lam_k)
    rss = np.sum((rhs / root - beta * root) ** 2)
    mu = _difference_eigenvalues(T)
    df = float(np.sum(lam_k[:, None] / (lam_k[:, None] + lam * mu[None, :])))
    dof = T * len(lam_k) - df
    # an interpolating smoother (lam = 0) leaves no residual degrees of freedom
    return rss / dof ** 2 if dof > 1e-9 else np.inf


def select_lambda_gcv(encoded, basis, lambda_grid=DEFAULT_LAMBDA_GRID):
    """Grid value with the smallest GCV score (first one on ties)."""
    grid = [float(x) for x in lambda_grid]
    if not grid:
        raise InvalidInputError("lambda grid is empty")
    if min(grid) < 0:
        raise InvalidInputError("lambda grid values must be nonnegative")
    scores = [gcv_score(encoded, basis, lam) for lam in grid]
    return grid[int(np.argmin(scores))]


def smooth(encoded, basis, config):
    """Pointwise recovery followed by the smoothing ``config`` asks for."""
    if config.mode == "tv":
        return smooth_tv(encoded, basis, config.lam, config.lambda_grid)
    result = recover_pointwise(encoded, basis)
    if config.mode == "window" and config.window > 0:
        return smooth_window(result, config.window)
    return result


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineCalibration:
    """Per-component map ``alpha_cal = scale * alpha + offset``."""

    scale: np.ndarray
    offset: np.ndarray

    def apply(self, alphas):
        return project_simplex(self.scale * alphas + self.offset)


def fit_two_point(observed_start, observed_end, true_start, true_end, tol=1e-9):
    """Per-component affine maps through two boundary points.

    Components whose known endpoints coincide (or whose observed endpoints
    coincide) cannot be fitted alone; they get a single affine map fitted by
    least squares to the boundary points of all components.
    """
    obs = np.stack([observed_start, observed_end]).astype(float)
    tru = np.stack([true_start, true_end]).astype(float)
    if np.max(np.abs(tru[1] - tru[0])) <= tol:
        raise CalibrationDegenerateError("boundary mixing vectors are identical")
    d_obs = obs[1] - obs[0]
    d_tru = tru[1] - tru[0]
    ok = (np.abs(d_tru) > tol) & (np.abs(d_obs) > tol)
    scale = np.ones_like(d_obs)
    offset = np.zeros_like(d_obs)
    scale[ok] = d_tru[ok] / d_obs[ok]
    offset[ok] = tru[0, ok] - scale[ok] * obs[0, ok]
    if not np.all(ok):
        x, y = obs.ravel(), tru.ravel()
        if np.ptp(x) <= tol:
            raise CalibrationDegenerateError("observed boundary values carry no scale information")
        a, b = np.polyfit(x, y, 1)
        scale[~ok] = a
        offset[~ok] = b
    return AffineCalibration(scale, offset)


def calibrate_two_point(result, start_alpha, end_alpha, n_steps=CALIBRATION_STEPS):
    """Affine correction from known boundary weights.

    The observed boundary values are the means of the first and last
    ``n_steps`` smoothed weights.  ``start_alpha``/``end_alpha`` are in basis
    order.
    """
    start_alpha = np.asarray(start_alpha, dtype=float)
    end_alpha = np.asarray(end_alpha, dtype=float)
    m = result.smoothed_alphas.shape[1]
    for a in (start_alpha, end_alpha):
        if a.shape != (m,) or np.any(a < -SIMPLEX_TOL) or abs(a.sum() - 1) > SIMPLEX_TOL:
            raise InvalidInputError("boundary weights must be simplex vectors in basis order")
    if 2 * n_steps > result.length:
        raise InvalidInputError("trajectory too short for the calibration window")
    sm = result.smoothed_alphas
    cal = fit_two_point(sm[:n_steps].mean(axis=0), sm[-n_steps:].mean(axis=0),
                        start_alpha, end_alpha)
    return replace(result, calibrated_alphas=cal.apply(sm))


def calibrate_linear_map(result, anchor_steps, anchor_alphas):
    """Affine map between shift coordinates fitted at anchor steps.

    Fits ``a_true = a_obs M + c`` by least squares on the smoothed shift
    coordinates at ``anchor_steps`` (at least ``m`` anchors for ``m``
    domains), applies it to every step, lifts and projects.
    """
    anchor_steps = np.asarray(anchor_steps, dtype=int)
    anchor_alphas = np.atleast_2d(np.asarray(anchor_alphas, dtype=float))
    m = result.smoothed_alphas.shape[1]
    if len(anchor_steps) < m or anchor_alphas.shape != (len(anchor_steps), m):
        raise InvalidInputError(f"need at least {m} anchors with {m} weights each")
    X = np.column_stack([result.smoothed_shift[anchor_steps], np.ones(len(anchor_steps))])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise CalibrationDegenerateError("anchor points do not determine an affine map")
    coef, *_ = np.linalg.lstsq(X, anchor_alphas[:, 1:], rcond=None)
    mapped = np.column_stack([result.smoothed_shift, np.ones(result.length)]) @ coef
    return replace(result, calibrated_alphas=project_simplex(lift(mapped)))
