"""Ground-truth latent dynamics with continuously mixed mechanisms.

Latents follow the second-order recurrence (column convention)::

    z_t = act(act(W(t) z_{t-1}) + act(W_lag2 z_{t-2})) + eps_t

with ``act`` a LeakyReLU and ``W(t) = W_base + sum_k alpha_k(t) dW_k``.
Domain 0 is the baseline (``dW_0 = 0``).  Batched arrays store one state per
row, so the matrix products are written ``z @ W.T``.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityViolationError, InvalidInputError, InversionError

DEFAULT_SLOPE = 0.2
BURN_IN = 10
SIMPLEX_ATOL = 1e-9


def rng_stream(seed, *keys):
    """Counter-based generator for one ``(seed, keys...)`` substream.

    String keys are hashed with CRC32 so streams are stable across processes.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode())
        words.append(int(key) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def leaky_relu(x, slope=DEFAULT_SLOPE):
    return np.where(x >= 0, x, slope * x)


def _inverse_leaky_relu(y, slope=DEFAULT_SLOPE):
    return np.where(y >= 0, y, y / slope)


# --------------------------------------------------------------------------
# Mechanisms
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MechanismSet:
    """Atomic transition matrices ``W^(k) = W_base + dW_k``.

    ``deltas`` has shape ``(K - 1, d, d)``; entry ``k - 1`` is ``dW_k``.
    Set ``allow_over_capacity`` to build more than ``d + 1`` mechanisms, in
    which case only subsets of at most ``d + 1`` may be used jointly.
    """

    w_base: np.ndarray
    deltas: np.ndarray
    w_lag2: np.ndarray
    activation_slope: float = DEFAULT_SLOPE
    delta_cells: tuple = ()
    allow_over_capacity: bool = False

    def __post_init__(self):
        w_base = np.asarray(self.w_base, dtype=float)
        deltas = np.asarray(self.deltas, dtype=float)
        d = w_base.shape[0]
        if w_base.shape != (d, d) or np.asarray(self.w_lag2).shape != (d, d):
            raise InvalidInputError("w_base and w_lag2 must be square and of equal size")
        if deltas.ndim != 3 or deltas.shape[1:] != (d, d):
            raise InvalidInputError(f"deltas must have shape (K-1, {d}, {d})")
        n_domains = deltas.shape[0] + 1
        if n_domains < 2:
            raise InvalidInputError("need at least two mechanisms")
        if n_domains > d + 1 and not self.allow_over_capacity:
            raise CapacityViolationError(
                f"K={n_domains} mechanisms exceed the capacity d+1={d + 1}"
            )
        stacked = deltas.reshape(n_domains - 1, d * d)
        if n_domains - 1 <= d * d:
            smin = np.linalg.svd(stacked, compute_uv=False)[-1]
        else:
            smin = 0.0
        if smin <= 1e-8:
            raise InvalidInputError(
                f"perturbations are not linearly independent (sigma_min={smin:.2e})"
            )
        object.__setattr__(self, "w_base", w_base)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "w_lag2", np.asarray(self.w_lag2, dtype=float))

    @property
    def latent_dim(self):
        return self.w_base.shape[0]

    @property
    def num_domains(self):
        return self.deltas.shape[0] + 1

    def transition(self, k):
        """Atomic matrix ``W^(k)``."""
        if k == 0:
            return self.w_base.copy()
        return self.w_base + self.deltas[k - 1]

    def row_nondegeneracy(self, domains=None):
        """Per-row check that the touched rows of the perturbations are independent.

        Returns a dict ``row -> bool``.  Rows no perturbation touches are
        reported as ``True``; the check is informational only.
        """
        domains = range(1, self.num_domains) if domains is None else [k for k in domains if k]
        report = {}
        for i in range(self.latent_dim):
            rows = np.array([self.deltas[k - 1][i] for k in domains])
            touched = rows[np.any(rows != 0, axis=1)]
            if len(touched) == 0:
                report[i] = True
            else:
                report[i] = np.linalg.matrix_rank(touched) == len(touched)
        return report


def build_mechanism_set(d, K, perturbation_norm, seed, activation_slope=DEFAULT_SLOPE,
                        base_norm=0.8, allow_over_capacity=False):
    """Random base dynamics plus ``K - 1`` single-edge perturbations.

    Each perturbation adds ``perturbation_norm`` to one distinct off-diagonal
    cell, strengthening that edge.  Cells go on distinct rows while rows
    remain (a shared row makes the one-step mean shifts of two domains
    collinear), taking rows in order of decreasing row sum of ``W_base``:
    under positive-mean contexts those rows sit mostly on the identity side
    of the LeakyReLU, so their perturbations move the conditional mean
    instead of being damped by the negative slope.  ``W_base`` is rescaled
    to spectral norm ``base_norm`` and ``W_lag2`` to ``0.3 * base_norm``.
    The random draws do not depend on ``perturbation_norm``, so sweeps over
    it share structure.
    """
    if K < 2:
        raise InvalidInputError("K must be at least 2")
    if K > d + 1 and not allow_over_capacity:
        raise CapacityViolationError(f"K={K} mechanisms exceed the capacity d+1={d + 1}")
    if K - 1 > d * (d - 1):
        raise InvalidInputError("not enough off-diagonal cells for distinct perturbations")
    if perturbation_norm <= 0:
        raise InvalidInputError("perturbation_norm must be positive")

    rng = rng_stream(seed, "mechanisms")
    w_base = rng.normal(size=(d, d))
    w_base *= base_norm / np.linalg.norm(w_base, 2)
    w_lag2 = rng.normal(size=(d, d))
    w_lag2 *= 0.3 * base_norm / np.linalg.norm(w_lag2, 2)

    row_order = np.argsort(-w_base.sum(axis=1), kind="stable")
    cells = []
    for k in range(K - 1):
        row = int(row_order[k % d])
        cols = [c for c in rng.permutation(d) if c != row and (row, int(c)) not in cells]
        cells.append((row, int(cols[0])))

    deltas = np.zeros((K - 1, d, d))
    for k, (i, j) in enumerate(cells):
        deltas[k, i, j] = perturbation_norm
    return MechanismSet(w_base, deltas, w_lag2, activation_slope, tuple(cells),
                        allow_over_capacity)


def _check_simplex(alpha, K, atol=SIMPLEX_ATOL):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != K:
        raise InvalidInputError(f"alpha must have {K} entries, got {alpha.shape[-1]}")
    if np.any(alpha < -atol) or np.any(np.abs(alpha.sum(axis=-1) - 1.0) > atol):
        raise InvalidInputError("alpha is not on the probability simplex")
    return alpha


def effective_transition(ms, alpha):
    """``W_base + sum_{k>=1} alpha_k dW_k`` for a simplex vector ``alpha``."""
    alpha = _check_simplex(alpha, ms.num_domains)
    return ms.w_base + np.tensordot(alpha[1:], ms.deltas, axes=1)


@dataclass(frozen=True)
class EdgeInjection:
    """Extra causal edge switched on while one mixing weight is mid-transition.

    Adds ``weight`` to ``W(t)[target, source]`` whenever
    ``low < alpha[component](t) < high``.  Breaks the convex-combination
    structure on purpose.
    """

    source: int = 1
    target: int = 4
    weight: float = 1.5
    component: int = 1
    low: float = 0.3
    high: float = 0.7

    def active(self, alphas):
        a = np.asarray(alphas)[..., self.component]
        return (a > self.low) & (a < self.high)

    def apply(self, w, alpha):
        if self.active(alpha):
            w = w.copy()
            w[self.target, self.source] += self.weight
        return w


def one_step(ms, z_prev, z_prev2, w, noise=None):
    """Next states for a batch of contexts under transition matrix ``w``."""
    s = ms.activation_slope
    inner = leaky_relu(z_prev @ w.T, s) + leaky_relu(z_prev2 @ ms.w_lag2.T, s)
    out = leaky_relu(inner, s)
    if noise is not None:
        out = out + noise
    return out


# --------------------------------------------------------------------------
# Schedules
# --------------------------------------------------------------------------

FAMILIES = ("sequential", "overlapping", "oscillating", "linear", "sinusoidal", "one_hot")


@dataclass(frozen=True, eq=False)
class MixingSchedule:
    """Ground-truth mixing weights, one simplex vector per time step."""

    alphas: np.ndarray
    family: str = "custom"
    active_domains: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if a.ndim != 2 or a.shape[0] < 1:
            raise InvalidInputError("alphas must have shape (T, K)")
        if np.any(a < 0) or np.max(np.abs(a.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidInputError("every alpha(t) must lie on the simplex")
        object.__setattr__(self, "alphas", a)

    @property
    def length(self):
        return self.alphas.shape[0]

    @property
    def num_domains(self):
        return self.alphas.shape[1]

    @property
    def total_variation(self):
        return float(np.sum(np.linalg.norm(np.diff(self.alphas, axis=0), axis=1)))


def _normalize(w):
    w = np.maximum(w, 0.0)
    w = w / w.sum(axis=1, keepdims=True)
    # second pass pins the row sums to 1 within a few ulps
    return w / w.sum(axis=1, keepdims=True)


def make_schedule(family, T, K, active_domains=None, vertex=0):
    """Mixing trajectory of a named family over ``T`` steps and ``K`` domains.

    Families
    --------
    sequential
        Piecewise-linear hand-offs through ``active_domains`` in order; at
        most two weights are nonzero and each domain peaks at 1.
    overlapping
        Normalized Gaussian bumps centred at evenly spaced times (peaks
        about 0.7 in the interior).
    oscillating
        Normalized cosine superposition
        ``1/2 (1 + cos((1 + k/2) 2 pi t / T + k pi / m))`` for the ``k``-th of
        ``m`` active domains.
    linear, sinusoidal
        Interpolation from the first active domain to the uniform mixture of
        the others, with a linear or half-cosine time profile.
    one_hot
        Constant vertex ``e_vertex``.
    """
    if T < 1:
        raise InvalidInputError("T must be positive")
    if family == "one_hot":
        if not 0 <= vertex < K:
            raise InvalidInputError(f"vertex {vertex} out of range for K={K}")
        alphas = np.zeros((T, K))
        alphas[:, vertex] = 1.0
        return MixingSchedule(alphas, "one_hot", (vertex,))
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown schedule family {family!r}")

    active = tuple(range(K)) if active_domains is None else tuple(int(k) for k in active_domains)
    m = len(active)
    if m < 2:
        raise InvalidInputError("need at least two active domains")
    if len(set(active)) != m or min(active) < 0 or max(active) >= K:
        raise InvalidInputError(f"active domains {active} invalid for K={K}")

    t = np.arange(T, dtype=float)
    s = t / max(T - 1, 1)
    local = np.zeros((T, m))
    if family == "sequential":
        pos = s * (m - 1)
        seg = np.minimum(np.floor(pos).astype(int), m - 2)
        frac = pos - seg
        local[np.arange(T), seg] = 1.0 - frac
        local[np.arange(T), seg + 1] += frac
    elif family == "overlapping":
        centers = np.linspace(0.0, T - 1, m)
        width = 0.57 * (T - 1) / (m - 1)
        local = np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2)
    elif family == "oscillating":
        k = np.arange(m)
        phase = (1 + 0.5 * k)[None, :] * 2 * np.pi * t[:, None] / T + k[None, :] * np.pi / m
        local = 0.5 * (1 + np.cos(phase)) + 1e-12
    else:
        prof = s if family == "linear" else 0.5 * (1 - np.cos(np.pi * s))
        local[:, 0] = 1.0 - prof
        local[:, 1:] = prof[:, None] / (m - 1)
    local = _normalize(local)
    alphas = np.zeros((T, K))
    alphas[:, list(active)] = local
    return MixingSchedule(alphas, family, active)


def make_violation_schedule(T, K=3, rule=None):
    """Sequential ``0 -> 1 -> 2`` schedule paired with an emergent-edge rule.

    The rule is applied by :func:`simulate` (and by the conditional samplers)
    and adds an edge ``z_2 -> z_5`` (zero-based ``1 -> 4``) while
    ``0.3 < alpha_1 < 0.7``.
    """
    if K < 3:
        raise InvalidInputError("the violation construction needs K >= 3")
    schedule = make_schedule("sequential", T, K, active_domains=(0, 1, 2))
    return schedule, (rule or EdgeInjection())


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixingMap:
    """Injective observation map built from orthonormal-column layers.

    Layer 1 maps ``d -> p`` and later layers ``p -> p``; each is followed by
    a LeakyReLU with slope 0.2.  Depth 0 is the zero-padded embedding.
    """

    layers: tuple
    latent_dim: int
    obs_dim: int
    slope: float = DEFAULT_SLOPE

    @property
    def depth(self):
        return len(self.layers)

    def forward(self, z):
        z = np.asarray(z, dtype=float)
        if not self.layers:
            pad = np.zeros(z.shape[:-1] + (self.obs_dim - self.latent_dim,))
            return np.concatenate([z, pad], axis=-1)
        x = z
        for q in self.layers:
            x = leaky_relu(x @ q.T, self.slope)
        return x

    def inverse(self, x, tol=1e-6):
        """Analytic left inverse; raises :class:`InversionError` off the image."""
        x = np.asarray(x, dtype=float)
        if not self.layers:
            resid = np.max(np.abs(x[..., self.latent_dim:]), initial=0.0)
            if resid > tol:
                raise InversionError(f"padded coordinates are nonzero (max {resid:.2e})")
            return x[..., : self.latent_dim].copy()
        y = x
        for q in reversed(self.layers):
            pre = _inverse_leaky_relu(y, self.slope)
            y = pre @ q
            resid = np.max(np.abs(y @ q.T - pre), initial=0.0)
            if resid > tol * max(1.0, np.max(np.abs(pre), initial=0.0)):
                raise InversionError(f"observation is off the image manifold (residual {resid:.2e})")
        return y


def make_mixing_map(d, p, depth, seed):
    """Seeded :class:`MixingMap`; orthonormal columns from QR of Gaussians."""
    if p < d:
        raise InvalidInputError(f"observation dimension p={p} must be >= d={d}")
    if depth < 0:
        raise InvalidInputError("depth must be nonnegative")
    rng = rng_stream(seed, "mixing-map")
    layers = []
    for layer in range(depth):
        cols = d if layer == 0 else p
        q, r = np.linalg.qr(rng.normal(size=(p, cols)))
        q = q * np.sign(np.diag(r))
        layers.append(q)
    return MixingMap(tuple(layers), d, p)


def mix_to_observations(latents, mixing_depth, p, seed):
    """Apply the seeded observation map to latents of shape ``(..., d)``."""
    latents = np.asarray(latents, dtype=float)
    return make_mixing_map(latents.shape[-1], p, mixing_depth, seed).forward(latents)


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    latents: np.ndarray
    observations: np.ndarray
    schedule: MixingSchedule
    noise_sigma: float
    seed: int
    mixing_map: MixingMap = field(default=None, repr=False)


def simulate_latents(ms, schedule, noise_sigma, seed, n_traj=1, burn_in=BURN_IN,
                     injection=None, stream=0):
    """Latent trajectories of shape ``(n_traj, T, d)``.

    Initial states ``z_{-1}, z_0 ~ N(0, I)``; ``burn_in`` steps run under
    ``alpha(1)`` and are discarded.  Noise is ``N(0, noise_sigma^2 I)``.
    ``stream`` selects an independent substream for the same seed.
    """
    if noise_sigma < 0:
        raise InvalidInputError("noise_sigma must be nonnegative")
    alphas = schedule.alphas
    T, K = alphas.shape
    if K != ms.num_domains:
        raise InvalidInputError(f"schedule has {K} domains, mechanisms have {ms.num_domains}")
    d = ms.latent_dim
    init_rng = rng_stream(seed, "init", stream)
    noise_rng = rng_stream(seed, "transition-noise", stream)
    z2 = init_rng.normal(size=(n_traj, d))
    z1 = init_rng.normal(size=(n_traj, d))
    noise = noise_sigma * noise_rng.normal(size=(burn_in + T, n_traj, d))

    out = np.empty((n_traj, T, d))
    for step in range(burn_in + T):
        alpha = alphas[max(step - burn_in, 0)]
        w = effective_transition(ms, alpha)
        if injection is not None:
            w = injection.apply(w, alpha)
        z_new = one_step(ms, z1, z2, w, noise[step])
        z2, z1 = z1, z_new
        if step >= burn_in:
            out[:, step - burn_in] = z_new
    return out


def simulate(ms, schedule, noise_sigma, seed, obs_dim=None, mixing_depth=3,
             injection=None, burn_in=BURN_IN):
    """Simulate one trajectory and its observations.

    Returns a :class:`TrajectoryBundle` with latents of shape ``(T, d)``.
    """
    if schedule.length < 3:
        raise InvalidInputError("T must be at least 3")
    latents = simulate_latents(ms, schedule, noise_sigma, seed, 1, burn_in, injection)[0]
    p = 2 * ms.latent_dim if obs_dim is None else obs_dim
    mixing = make_mixing_map(ms.latent_dim, p, mixing_depth, seed)
    return TrajectoryBundle(latents, mixing.forward(latents), schedule, float(noise_sigma),
                            int(seed), mixing)


def write_bundle_csv(bundle, path, metadata=None):
    """Write ``t, z_*, x_*, alpha_*`` rows plus a ``.meta`` sidecar."""
    T, d = bundle.latents.shape
    p = bundle.observations.shape[1]
    K = bundle.schedule.num_domains
    header = (["t"] + [f"z_{i}" for i in range(d)] + [f"x_{i}" for i in range(p)]
              + [f"alpha_{k}" for k in range(K)])
    data = np.column_stack([np.arange(T), bundle.latents, bundle.observations,
                            bundle.schedule.alphas])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="",
               fmt=["%d"] + ["%.17g"] * (data.shape[1] - 1))
    meta = {"d": d, "K": K, "T": T, "p": p, "noise_sigma": bundle.noise_sigma,
            "seed": bundle.seed, "family": bundle.schedule.family}
    meta.update(metadata or {})
    write_metadata(str(path) + ".meta", meta)


def read_bundle_csv(path):
    """Read a trajectory CSV; returns ``(latents, observations, alphas)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = {p: [i for i, h in enumerate(header) if h.startswith(p + "_")]
            for p in ("z", "x", "alpha")}
    return data[:, cols["z"]], data[:, cols["x"]], data[:, cols["alpha"]]


def write_metadata(path, meta):
    with open(path, "w") as fh:
        for key in sorted(meta):
            fh.write(f"{key}: {meta[key]}\n")
