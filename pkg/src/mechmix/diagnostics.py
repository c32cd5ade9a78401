"""Checks that make the recovery guarantees measurable on a given run.

* effective SNR ``sigma_min / (mean residual + delta_approx)``
* per-step comparison of the pointwise error with its a-priori bound
* two-sample Kolmogorov-Smirnov test of pure-domain against transition
  residuals, with a three-level verdict on the convex-mixing assumption
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

KS_TERMS = 100
KS_MIN_SAMPLES = 20
SUPPORTED, MARGINAL, VIOLATED = "supported", "marginal", "violated"


def compute_snr_eff(sigma_min, residual_norms, delta_approx):
    """``sigma_min / (mean(residual_norms) + delta_approx)``.

    ``sigma_min`` may also be a :class:`~mechmix.basis.DomainBasis`.
    """
    sigma_min = float(getattr(sigma_min, "sigma_min", sigma_min))
    res = np.asarray(residual_norms, dtype=float)
    if delta_approx < 0 or np.any(res < 0):
        raise InvalidInputError("residual norms and delta_approx must be nonnegative")
    denom = (res.mean() if res.size else 0.0) + delta_approx
    if denom < 1e-12:
        raise InvalidInputError("zero residuals and zero delta_approx give an unbounded SNR")
    return sigma_min / denom


def kolmogorov_sf(x, terms=KS_TERMS):
    """Survival function of the Kolmogorov distribution,
    ``2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 x^2)``, clipped to ``[0, 1]``."""
    if x <= 0:
        return 1.0
    j = np.arange(1, terms + 1)
    val = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j**2 * x**2))
    return float(min(max(val, 0.0), 1.0))


def ks_two_sample(sample_a, sample_b):
    """Two-sample KS statistic and asymptotic p-value.

    The p-value uses the effective size ``n_a n_b / (n_a + n_b)`` in the
    Kolmogorov limit distribution.
    """
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size < KS_MIN_SAMPLES or b.size < KS_MIN_SAMPLES:
        raise InvalidInputError(f"KS test needs at least {KS_MIN_SAMPLES} points per sample")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("samples contain non-finite values")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    return stat, kolmogorov_sf(np.sqrt(n_eff) * stat)


def ks_verdict(p_value):
    if p_value > 0.05:
        return SUPPORTED
    if p_value > 0.01:
        return MARGINAL
    return VIOLATED


@dataclass(frozen=True)
class AssumptionCheck:
    ks_statistic: float
    ks_p_value: float
    verdict: str
    n_pure: int
    n_transition: int


def verify_assumption(pure_residuals, transition_residuals):
    """KS comparison of pure-domain and transition residual norms."""
    stat, p = ks_two_sample(pure_residuals, transition_residuals)
    return AssumptionCheck(stat, p, ks_verdict(p), int(np.size(pure_residuals)),
                           int(np.size(transition_residuals)))


@dataclass(frozen=True, eq=False)
class BoundReport:
    """Per-step pointwise errors against the a-priori bound."""

    errors: np.ndarray
    bounds: np.ndarray

    @property
    def satisfied(self):
        return self.errors <= self.bounds

    @property
    def violations(self):
        return int(np.sum(~self.satisfied))

    @property
    def fraction_satisfied(self):
        return float(np.mean(self.satisfied))


def check_pointwise_bound(result, truth_alphas, sigma_min, delta_approx, injected_eps,
                          slack=1e-9):
    """Compare ``||a_hat_t - a*_t||`` with ``(||eps_t|| + delta_approx) / sigma_min``.

    Errors use the unprojected shift coordinates, for which the bound is
    stated; projection can only shrink them.

    Parameters
    ----------
    result : RecoveryResult
    truth_alphas : array of shape (T, m)
        True weights in basis order.
    sigma_min : float or DomainBasis
    delta_approx : float
    injected_eps : array of shape (T,) or (T, d)
        Per-step representation deviations (norms, or the vectors).
    """
    sigma_min = float(getattr(sigma_min, "sigma_min", sigma_min))
    truth = np.asarray(truth_alphas, dtype=float)
    eps = np.asarray(injected_eps, dtype=float)
    if eps.ndim == 2:
        eps = np.linalg.norm(eps, axis=1)
    T = result.length
    if truth.shape != result.raw_alphas.shape or eps.shape != (T,):
        raise InvalidInputError("truth, epsilons and result must cover the same steps")
    if sigma_min <= 0:
        raise InvalidInputError("sigma_min must be positive")
    errors = np.linalg.norm(result.raw_shift - truth[:, 1:], axis=1)
    bounds = (eps + delta_approx) / sigma_min + slack
    return BoundReport(errors, bounds)


@dataclass(frozen=True)
class DiagnosticsReport:
    """Run-level diagnostics; ``snr_eff`` is recomputed from its parts."""

    sigma_min: float
    mean_residual: float
    delta_approx: float
    bound_violations: int = 0
    bound_fraction: float = 1.0
    ks_statistic: float = float("nan")
    ks_p_value: float = float("nan")
    verdict: str = ""
    warnings: tuple = ()
    snr_eff: float = field(init=False)

    def __post_init__(self):
        denom = self.mean_residual + self.delta_approx
        snr = self.sigma_min / denom if denom > 0 else float("inf")
        object.__setattr__(self, "snr_eff", float(snr))
        if self.verdict and self.verdict not in (SUPPORTED, MARGINAL, VIOLATED):
            raise InvalidInputError(f"unknown verdict {self.verdict!r}")

    FIELDS = ("snr_eff", "sigma_min", "mean_residual", "delta_approx", "bound_violations",
              "bound_fraction", "ks_statistic", "ks_p_value", "verdict")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_text(self):
        lines = [f"{k}: {v}" for k, v in self.as_dict().items()]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"

    def csv_header(self):
        return ",".join(self.FIELDS)

    def csv_row(self):
        return ",".join(str(getattr(self, k)) for k in self.FIELDS)
