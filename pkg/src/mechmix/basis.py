"""Domain basis: baseline conditional mean and per-domain mean shifts.

Conditional means are estimated one step ahead from a shared set of seeded
context states ``(z_{t-1}, z_{t-2})``: every domain is driven for one step
from the same contexts with the same noise draws, and the encoded outputs
are averaged.  Matching contexts across domains removes the bias a plain
per-domain average picks up when domains settle into different stationary
distributions (that estimator is kept as :func:`observational_encodings`).

Context states are drawn from ``N(context_mean * 1, I)``.  They have unit
scale independent of the transition noise, and the positive mean lets a
single-edge perturbation move the conditional mean at first order.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasisError, InvalidInputError
from .generator import (_check_simplex, effective_transition, make_schedule, one_step,
                        rng_stream, simulate_latents)
from .linalg import pseudoinverse, svd

#: Below this the basis is unusable.
SIGMA_MIN_FLOOR = 1e-6
#: Below this recovery runs but results carry a conditioning warning.
SIGMA_MIN_WARN = 0.05
CONTEXT_MEAN = 1.0
#: Pairwise mixing levels probed for the linearisation residual.
PROBE_LEVELS = tuple(np.arange(1, 100) / 100)


class BasisWarning(UserWarning):
    """Basis is full rank but poorly conditioned."""


@dataclass(frozen=True, eq=False)
class DomainBasis:
    """Baseline mean ``mu0`` and shift matrix ``B`` (one column per non-baseline domain).

    Attributes
    ----------
    mu0 : ndarray of shape (d,)
    B : ndarray of shape (d, m - 1)
        Column ``j`` is the mean shift of ``domains[j + 1]``.
    domains : tuple of int
        Domain labels in basis order; ``domains[0]`` is the baseline.
    counts : tuple of int
        Samples behind each domain mean.
    sigma_min : float
        Smallest singular value of ``B``, recomputed on construction.
    warning : str
        Empty unless ``sigma_min`` is below :data:`SIGMA_MIN_WARN`.
    """

    mu0: np.ndarray
    B: np.ndarray
    domains: tuple = None
    counts: tuple = ()
    sigma_min: float = field(init=False)
    warning: str = field(init=False)

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if mu0.ndim != 1 or B.ndim != 2 or B.shape[0] != mu0.shape[0] or B.shape[1] < 1:
            raise InvalidInputError(f"incompatible shapes mu0 {mu0.shape}, B {B.shape}")
        if not (np.all(np.isfinite(mu0)) and np.all(np.isfinite(B))):
            raise InvalidInputError("basis has non-finite entries")
        domains = tuple(range(B.shape[1] + 1)) if self.domains is None else tuple(self.domains)
        if len(domains) != B.shape[1] + 1:
            raise InvalidInputError("need one domain label per basis column plus the baseline")
        s = svd(B).singular_values
        smin = float(s[-1]) if B.shape[0] >= B.shape[1] else 0.0
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "domains", domains)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "sigma_min", smin)
        msg = ""
        if smin < SIGMA_MIN_WARN:
            msg = (f"sigma_min={smin:.3g} is below {SIGMA_MIN_WARN}: basis columns are "
                   "nearly collinear and recovered weights will be noisy")
        object.__setattr__(self, "warning", msg)

    @property
    def latent_dim(self):
        return self.B.shape[0]

    @property
    def num_domains(self):
        return self.B.shape[1] + 1

    @property
    def degenerate(self):
        return self.sigma_min < SIGMA_MIN_FLOOR

    def pinv(self):
        """Left pseudoinverse of ``B``; raises on a degenerate basis."""
        if self.degenerate:
            raise DegenerateBasisError(
                f"basis is degenerate (sigma_min={self.sigma_min:.3e}); mean shifts are "
                "collinear, so mixing weights are not identifiable", sigma_min=self.sigma_min)
        return pseudoinverse(self.B)

    def predict(self, alpha):
        """``mu0 + B alpha[1:]`` for full simplex vectors in basis order."""
        alpha = np.asarray(alpha, dtype=float)
        return self.mu0 + alpha[..., 1:] @ self.B.T

    def local(self, alphas):
        """Restrict global mixing weights to this basis' domains."""
        return np.asarray(alphas, dtype=float)[..., list(self.domains)]

    def to_text(self):
        lines = ["mu0: " + " ".join(repr(float(v)) for v in self.mu0)]
        for j in range(self.B.shape[1]):
            lines.append(f"B_{j}: " + " ".join(repr(float(v)) for v in self.B[:, j]))
        lines.append(f"sigma_min: {self.sigma_min!r}")
        lines.append("domains: " + " ".join(str(k) for k in self.domains))
        lines.append("counts: " + " ".join(str(c) for c in self.counts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition(":")
            fields[key.strip()] = value.split()
        try:
            mu0 = np.array(fields["mu0"], dtype=float)
            cols = sorted((k for k in fields if k.startswith("B_")), key=lambda k: int(k[2:]))
            B = np.column_stack([np.array(fields[k], dtype=float) for k in cols])
            domains = tuple(int(k) for k in fields.get("domains", [])) or None
            counts = tuple(int(c) for c in fields.get("counts", []))
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"malformed basis file: {exc}") from exc
        return cls(mu0, B, domains, counts)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def estimate_basis(encodings, domains=None, min_samples=50):
    """Basis from per-domain encoded one-step outputs.

    Parameters
    ----------
    encodings : sequence of arrays of shape (n_k, d)
        Encoded states for each domain, baseline first.
    domains : sequence of int, optional
        Labels for the entries of ``encodings``.
    min_samples : int
        Minimum number of rows per domain.

    Raises
    ------
    DegenerateBasisError
        If the smallest singular value of ``B`` is below :data:`SIGMA_MIN_FLOOR`.
    """
    if len(encodings) < 2:
        raise InvalidInputError("need encodings from at least two domains")
    means, counts = [], []
    for k, enc in enumerate(encodings):
        enc = np.asarray(enc, dtype=float)
        enc = enc.reshape(-1, enc.shape[-1])
        if enc.shape[0] < min_samples:
            raise InvalidInputError(
                f"domain {k} has {enc.shape[0]} samples, need at least {min_samples}")
        means.append(enc.mean(axis=0))
        counts.append(enc.shape[0])
    mu0 = means[0]
    B = np.column_stack([m - mu0 for m in means[1:]])
    basis = DomainBasis(mu0, B, domains, counts)
    if basis.degenerate:
        raise DegenerateBasisError(
            f"estimated basis is degenerate (sigma_min={basis.sigma_min:.3e}); the domains "
            "do not shift the conditional mean in independent directions",
            sigma_min=basis.sigma_min)
    if basis.warning:
        warnings.warn(basis.warning, BasisWarning, stacklevel=2)
    return basis


def perturb_basis(basis, error):
    """Basis with ``B + E``; a scalar ``error`` means ``E = error * B``.

    Models estimation error in the shift matrix.  Recovery against the
    perturbed basis returns ``(I - B^+ E) alpha`` to first order, which is
    what calibration undoes.
    """
    E = error * basis.B if np.isscalar(error) else np.asarray(error, dtype=float)
    return DomainBasis(basis.mu0, basis.B + E, basis.domains, basis.counts)


def analytic_basis(ms, z_prev, z_prev2, domains=None):
    """First-order basis of the latent conditional mean at given contexts.

    ``mu0`` is the noise-free baseline output averaged over the contexts and
    column ``k`` is ``E[diag(s'(inner) s'(pre)) dW_k z_{t-1}]``, the
    derivative of the mean in the direction of domain ``k``.  With
    ``activation_slope = 1`` the dynamics are linear and this is the exact
    basis.
    """
    domains = tuple(range(ms.num_domains)) if domains is None else tuple(domains)
    if len(domains) < 2:
        raise InvalidInputError("need at least two domains")
    z_prev = np.atleast_2d(np.asarray(z_prev, dtype=float))
    z_prev2 = np.atleast_2d(np.asarray(z_prev2, dtype=float))
    s = ms.activation_slope
    w0 = ms.transition(domains[0])
    pre = z_prev @ w0.T
    lag = z_prev2 @ ms.w_lag2.T
    inner = np.where(pre >= 0, pre, s * pre) + np.where(lag >= 0, lag, s * lag)
    mu0 = np.where(inner >= 0, inner, s * inner).mean(axis=0)
    gain = np.where(inner >= 0, 1.0, s) * np.where(pre >= 0, 1.0, s)
    cols = [(gain * (z_prev @ (ms.transition(k) - w0).T)).mean(axis=0) for k in domains[1:]]
    return DomainBasis(mu0, np.column_stack(cols), domains, (len(z_prev),) * len(domains))


# --------------------------------------------------------------------------
# Conditional sampling from shared contexts
# --------------------------------------------------------------------------


def sample_contexts(d, n, seed, key="contexts", mean=CONTEXT_MEAN):
    """``n`` seeded context pairs ``(z_{t-1}, z_{t-2})``, each ``N(mean, I)``."""
    rng = rng_stream(seed, key)
    return mean + rng.normal(size=(n, d)), mean + rng.normal(size=(n, d))


def transition_latents(ms, alphas, z_prev, z_prev2, noise, injection=None):
    """One-step outputs for every mixing vector and context.

    Parameters
    ----------
    alphas : array of shape (m, K)
    z_prev, z_prev2 : arrays of shape (m, n, d) or (n, d)
        Contexts, either per mixing vector or shared by all of them.
    noise : array broadcastable to (m, n, d)

    Returns
    -------
    ndarray of shape (m, n, d)
    """
    alphas = np.atleast_2d(alphas)
    ws = np.stack([effective_transition(ms, a) if injection is None
                   else injection.apply(effective_transition(ms, a), a) for a in alphas])
    z_prev = np.broadcast_to(z_prev, (len(alphas),) + np.shape(z_prev)[-2:])
    z_prev2 = np.broadcast_to(z_prev2, z_prev.shape)
    s = ms.activation_slope
    pre = np.einsum("mnj,mij->mni", z_prev, ws)
    lag = z_prev2 @ ms.w_lag2.T
    inner = np.where(pre >= 0, pre, s * pre) + np.where(lag >= 0, lag, s * lag)
    return np.where(inner >= 0, inner, s * inner) + noise


class ConditionalSampler:
    """Encoded one-step outputs from a fixed pool of shared contexts.

    Parameters
    ----------
    ms : MechanismSet
    noise_sigma : float
        Transition noise.
    seed : int
    encoder : callable, optional
        Maps latents of shape ``(..., d)`` to encodings; identity if omitted.
    n_contexts : int
        Size of the shared context pool.
    context_mean : float
    injection : EdgeInjection, optional
        Applied to every transition the sampler simulates.
    moment_match : bool
        Centre the context pool on ``context_mean`` and the shared noise on
        zero.  A pool of a few hundred contexts otherwise carries a sample-mean
        error of order ``1/sqrt(n_contexts)`` into ``mu0``, which shows up as a
        constant per-domain offset in every recovered trajectory.
    """

    def __init__(self, ms, noise_sigma, seed, encoder=None, n_contexts=200,
                 context_mean=CONTEXT_MEAN, injection=None, moment_match=True):
        if noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be nonnegative")
        self.ms = ms
        self.noise_sigma = float(noise_sigma)
        self.seed = seed
        self.encoder = encoder
        self.context_mean = context_mean
        self.injection = injection
        d = ms.latent_dim
        self.z_prev, self.z_prev2 = sample_contexts(d, n_contexts, seed, "basis-contexts",
                                                    context_mean)
        self.noise = noise_sigma * rng_stream(seed, "basis-noise").normal(size=(n_contexts, d))
        if moment_match and n_contexts > 1:
            self.z_prev += context_mean - self.z_prev.mean(axis=0)
            self.z_prev2 += context_mean - self.z_prev2.mean(axis=0)
            self.noise -= self.noise.mean(axis=0)

    @property
    def n_contexts(self):
        return self.z_prev.shape[0]

    def _encode(self, latents, key):
        return latents if self.encoder is None else self.encoder(latents, key)

    def _alphas(self, alphas):
        return _check_simplex(np.atleast_2d(alphas), self.ms.num_domains)

    def samples(self, alphas, key="basis"):
        """Encoded outputs at the shared contexts, shape ``(m, n_contexts, d)``."""
        alphas = self._alphas(alphas)
        lat = transition_latents(self.ms, alphas, self.z_prev, self.z_prev2, self.noise,
                                 self.injection)
        return self._encode(lat, key)

    def mean(self, alphas):
        """Conditional mean of the encoding at each mixing vector, shape ``(m, d)``."""
        return self.samples(alphas).mean(axis=1)

    def domain_encodings(self, domains):
        """Per-domain encodings at the shared contexts (input to :func:`estimate_basis`)."""
        K = self.ms.num_domains
        return list(self.samples(np.eye(K)[list(domains)]))

    def basis(self, domains, min_samples=50):
        return estimate_basis(self.domain_encodings(domains), domains, min_samples)

    def probe(self, alphas, n_probe, key="probe", mode="resampled", return_latents=False):
        """Fresh encoded samples per mixing vector, shape ``(m, n_probe, d)``.

        ``mode="resampled"`` draws new contexts and noise for every mixing
        vector; ``mode="shared"`` reuses the basis contexts (``n_probe`` is
        then the pool size) with fresh noise.  With ``return_latents`` the
        true latents are returned as well.
        """
        alphas = self._alphas(alphas)
        m, d = len(alphas), self.ms.latent_dim
        if mode == "shared":
            z1, z2 = self.z_prev, self.z_prev2
            n_probe = self.n_contexts
        elif mode == "resampled":
            rng = rng_stream(self.seed, key, "contexts")
            z1 = self.context_mean + rng.normal(size=(m, n_probe, d))
            z2 = self.context_mean + rng.normal(size=(m, n_probe, d))
        else:
            raise InvalidInputError(f"unknown probe mode {mode!r}")
        noise = self.noise_sigma * rng_stream(self.seed, key, "noise").normal(size=(m, n_probe, d))
        lat = transition_latents(self.ms, alphas, z1, z2, noise, self.injection)
        enc = self._encode(lat, key)
        return (enc, lat) if return_latents else enc


def default_probe_alphas(K, domains, levels=PROBE_LEVELS):
    """Probe mixtures for the linearisation residual.

    Pairwise mixtures at ``levels`` for every pair of ``domains`` plus the
    uniform mixture over every subset of three or more of them.  The
    residual of a mixture grows with the number of domains it mixes, so the
    face barycentres cover the interior of the simplex that pairwise probes
    miss.  The default level grid is fine (step 0.01) because the residual
    along an edge is only piecewise smooth and a coarse grid such as
    ``(0.25, 0.5, 0.75)`` can miss its maximum.
    """
    domains = list(domains)
    probes = []
    for i, j in itertools.combinations(domains, 2):
        for lev in levels:
            a = np.zeros(K)
            a[i], a[j] = 1.0 - lev, lev
            probes.append(a)
    for size in range(3, len(domains) + 1):
        for subset in itertools.combinations(domains, size):
            a = np.zeros(K)
            a[list(subset)] = 1.0 / size
            probes.append(a)
    return np.array(probes)


def approximation_residuals(sampler, basis, alphas):
    """``mean(alpha) - mu0 - B alpha`` for global mixing vectors, shape ``(m, d)``."""
    alphas = np.atleast_2d(alphas)
    return sampler.mean(alphas) - basis.predict(basis.local(alphas))


def estimate_delta_approx(sampler, basis, probe_alphas=None):
    """Largest first-order residual ``||mu(alpha) - mu0 - B alpha||`` over probes.

    Mixed-domain means come from the same shared contexts as the basis, so
    the estimate isolates the nonlinearity of the mixed conditional mean.
    """
    if probe_alphas is None:
        probe_alphas = default_probe_alphas(sampler.ms.num_domains, basis.domains)
    probe_alphas = np.atleast_2d(probe_alphas)
    outside = np.delete(probe_alphas, list(basis.domains), axis=1)
    if outside.size and np.any(np.abs(outside) > 0):
        raise InvalidInputError("probe alphas put weight on domains outside the basis")
    resid = approximation_residuals(sampler, basis, probe_alphas)
    return float(np.max(np.linalg.norm(resid, axis=1)))


def observational_encodings(ms, domains, noise_sigma, seed, n_traj=200, T=50, encoder=None):
    """Plain per-domain state samples from simulated pure-domain trajectories.

    Fallback for settings without simulator access to matched contexts.  The
    resulting means mix the mechanism effect with differences between the
    domains' stationary state distributions, so the basis is biased.
    """
    out = []
    for k in domains:
        sched = make_schedule("one_hot", T, ms.num_domains, vertex=k)
        z = simulate_latents(ms, sched, noise_sigma, seed, n_traj=n_traj, stream=k)
        z = z.reshape(-1, ms.latent_dim)
        out.append(z if encoder is None else encoder(z, f"observational-{k}"))
    return out
