"""Scores for latent and mixing-weight recovery."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedCorrelationError
from .generator import effective_transition
from .linalg import optimal_assignment

MCC_KINDS = ("spearman_abs", "pearson_abs")


def _ranks(x):
    """Column-wise average ranks (ties share the mean rank)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        col = x[:, j]
        order = np.argsort(col, kind="mergesort")
        ranks = np.empty(len(col))
        ranks[order] = np.arange(len(col), dtype=float)
        _, inv, counts = np.unique(col, return_inverse=True, return_counts=True)
        sums = np.bincount(inv, weights=ranks)
        out[:, j] = sums[inv] / counts[inv]
    return out


def _corr_matrix(a, b):
    """Pearson correlation between every column of ``a`` and of ``b``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedCorrelationError("a column has zero variance")
    return np.clip((a.T @ b) / np.outer(na, nb), -1.0, 1.0)


def mcc(estimated, truth, kind="spearman_abs"):
    """Mean correlation coefficient under the best column matching.

    Returns
    -------
    score : float
        Mean absolute correlation of matched pairs.
    perm : ndarray of int
        ``perm[i]`` is the truth column matched to estimated column ``i``.
    """
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or est.ndim != 2:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {tru.shape}")
    if est.shape[0] < 3:
        raise InvalidInputError("need at least 3 samples")
    if kind == "spearman_abs":
        est, tru = _ranks(est), _ranks(tru)
    elif kind != "pearson_abs":
        raise InvalidInputError(f"unknown MCC kind {kind!r}")
    c = np.abs(_corr_matrix(est, tru))
    perm = optimal_assignment(-c)
    return float(np.mean(c[np.arange(len(perm)), perm])), perm


def _pearson(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    x = x - x.mean()
    y = y - y.mean()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise UndefinedCorrelationError("zero variance")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def _active_columns(truth, active):
    if active is None:
        active = np.flatnonzero(np.any(truth != 0, axis=0))
    return list(active)


def weight_correlation(estimated_alphas, truth_alphas, active=None):
    """Pearson correlation over the pooled ``(t, k)`` pairs of active domains.

    ``active`` defaults to the domains with any nonzero true weight.
    """
    est = np.asarray(estimated_alphas, dtype=float)
    tru = np.asarray(truth_alphas, dtype=float)
    if est.shape != tru.shape:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {tru.shape}")
    cols = _active_columns(tru, active)
    return _pearson(est[:, cols], tru[:, cols])


def per_component_correlation(estimated_alphas, truth_alphas, active=None):
    """Pearson correlation per active domain; ``nan`` where undefined."""
    est = np.asarray(estimated_alphas, dtype=float)
    tru = np.asarray(truth_alphas, dtype=float)
    out = []
    for k in _active_columns(tru, active):
        try:
            out.append(_pearson(est[:, k], tru[:, k]))
        except UndefinedCorrelationError:
            out.append(float("nan"))
    return np.array(out)


def w_trajectory_correlation(ms, estimated_alphas, truth_alphas):
    """Pearson correlation over all entries of the implied ``W(t)`` sequences."""
    w_est = np.stack([effective_transition(ms, a) for a in np.asarray(estimated_alphas)])
    w_tru = np.stack([effective_transition(ms, a) for a in np.asarray(truth_alphas)])
    return _pearson(w_est, w_tru)


def mae(estimated_alphas, truth_alphas):
    """Mean absolute error over all ``(t, k)``."""
    est = np.asarray(estimated_alphas, dtype=float)
    tru = np.asarray(truth_alphas, dtype=float)
    if est.shape != tru.shape:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {tru.shape}")
    return float(np.mean(np.abs(est - tru)))


def mse(estimated_alphas, truth_alphas):
    """Mean squared error over all ``(t, k)``."""
    est = np.asarray(estimated_alphas, dtype=float)
    tru = np.asarray(truth_alphas, dtype=float)
    if est.shape != tru.shape:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {tru.shape}")
    return float(np.mean((est - tru) ** 2))


@dataclass(frozen=True)
class ScoreCard:
    """Scores for one run."""

    mcc: float
    weight_corr: float
    mae_raw: float
    w_traj_corr: float
    mae_cal: float = float("nan")
    assignment: tuple = ()
    component_corr: tuple = ()

    FIELDS = ("mcc", "weight_corr", "mae_raw", "mae_cal", "w_traj_corr")

    def __post_init__(self):
        for k in ("mcc", "weight_corr", "mae_raw", "w_traj_corr"):
            if not np.isfinite(getattr(self, k)):
                raise InvalidInputError(f"score {k} is not finite")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}
