"""Encoder simulator standing in for a trained representation learner.

A learned encoder is only identifiable up to a permutation of the latent
coordinates and a strictly monotone warp of each one.  This module applies
exactly that class of distortions to true latents::

    zhat_i = h_i(z_{perm[i]}) + noise,   h_i(z) = a_i z + b_i tanh(c_i z) + shift_i

Monotonicity needs ``a_i > |b_i c_i|`` (increasing) or, with ``flip``,
the negated warp (decreasing).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDistortionError, InvalidInputError
from .generator import rng_stream


@dataclass(frozen=True, eq=False)
class EncoderDistortion:
    """Permutation, per-coordinate monotone warp and representation noise.

    Attributes
    ----------
    perm : int array of shape (d,)
        Encoded coordinate ``i`` reads true coordinate ``perm[i]``.
    a, b, c, shift : float arrays of shape (d,)
        Warp parameters.
    flip : bool array of shape (d,)
        Coordinates whose warp is negated (strictly decreasing).
    noise_sigma : float
        Standard deviation of additive Gaussian representation noise.
    """

    perm: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    shift: np.ndarray
    flip: np.ndarray = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=int)
        d = perm.shape[0]
        if perm.ndim != 1 or sorted(perm.tolist()) != list(range(d)):
            raise InvalidDistortionError("perm must be a permutation of 0..d-1")
        object.__setattr__(self, "perm", perm)
        for name in ("a", "b", "c", "shift"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (d,)).copy()
            if not np.all(np.isfinite(arr)):
                raise InvalidDistortionError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        flip = np.zeros(d, dtype=bool) if self.flip is None else np.asarray(self.flip, dtype=bool)
        object.__setattr__(self, "flip", np.broadcast_to(flip, (d,)).copy())
        if not np.all(self.a > np.abs(self.b * self.c)):
            raise InvalidDistortionError("warp is not strictly monotone: need a > |b c|")
        if self.noise_sigma < 0:
            raise InvalidDistortionError("noise_sigma must be nonnegative")

    @property
    def dim(self):
        return self.perm.shape[0]

    def warp(self, z):
        """Noise-free ``h_i(z_{perm[i]})`` for rows of ``z``."""
        u = np.asarray(z, dtype=float)[..., self.perm]
        h = self.a * u + self.b * np.tanh(self.c * u) + self.shift
        return np.where(self.flip, -h, h)

    def derivative(self, z):
        """``h_i'`` evaluated at ``z_{perm[i]}``."""
        u = np.asarray(z, dtype=float)[..., self.perm]
        dh = self.a + self.b * self.c / np.cosh(self.c * u) ** 2
        return np.where(self.flip, -dh, dh)

    def unwarp(self, zhat, tol=1e-12, max_iter=200):
        """Invert the noise-free warp coordinate by coordinate (bisection).

        ``h_i`` is bracketed because ``|h_i(u) - a_i u - shift_i| <= |b_i|``.
        """
        y = np.asarray(zhat, dtype=float)
        y = np.where(self.flip, -y, y) - self.shift
        span = (np.abs(self.b) + np.abs(y)) / self.a + 1.0
        lo, hi = -span, span
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            val = self.a * mid + self.b * np.tanh(self.c * mid)
            above = val > y
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.max(hi - lo) < tol:
                break
        u = 0.5 * (lo + hi)
        z = np.empty_like(u)
        z[..., self.perm] = u
        return z

    def with_noise(self, noise_sigma):
        return EncoderDistortion(self.perm, self.a, self.b, self.c, self.shift,
                                 self.flip, noise_sigma)


def identity_distortion(d):
    """The trivial member of the class: ``zhat = z``."""
    return EncoderDistortion(np.arange(d), np.ones(d), np.zeros(d), np.ones(d), np.zeros(d))


def random_distortion(d, seed, a_range=(0.7, 1.3), b_range=(-0.3, 0.3), c_range=(0.5, 2.0),
                      shift_range=(-0.5, 0.5), noise_sigma=0.0, allow_decreasing=False,
                      permute=True):
    """Draw a random monotone distortion.

    Parameter pairs that would break ``a > |b c|`` are shrunk in ``b`` so the
    default ranges always produce valid warps.  With ``allow_decreasing`` each
    coordinate is flipped with probability one half.
    """
    rng = rng_stream(seed, "distortion")
    perm = rng.permutation(d) if permute else np.arange(d)
    a = rng.uniform(*a_range, size=d)
    b = rng.uniform(*b_range, size=d)
    c = rng.uniform(*c_range, size=d)
    shift = rng.uniform(*shift_range, size=d)
    limit = 0.95 * a / c
    b = np.clip(b, -limit, limit)
    flip = rng.random(d) < 0.5 if allow_decreasing else np.zeros(d, dtype=bool)
    return EncoderDistortion(perm, a, b, c, shift, flip, noise_sigma)


def encode(latents, dist, seed=0):
    """Apply a distortion to latents of shape ``(..., d)``.

    Noise, if any, is drawn from the ``(seed, "encode")`` substream.
    """
    latents = np.asarray(latents, dtype=float)
    if latents.shape[-1] != dist.dim:
        raise InvalidInputError(f"latents have {latents.shape[-1]} columns, distortion has {dist.dim}")
    out = dist.warp(latents)
    if dist.noise_sigma > 0:
        out = out + dist.noise_sigma * rng_stream(seed, "encode").normal(size=out.shape)
    return out


def oracle_encoder(observations, mixing_map, tol=1e-6):
    """Exact left inverse of the observation map.

    Raises ``InversionError`` when an observation is off the image manifold by
    more than ``tol``.
    """
    return mixing_map.inverse(observations, tol=tol)


class EncoderSim:
    """Callable encoder used by the pipelines.

    ``mode="oracle"`` pushes latents through the observation map and back
    through its analytic inverse.  ``mode="distorted"`` applies ``distortion``
    directly to the latents (the observation map is bijective on its image,
    so distorting latents equals distorting the exact inverse).
    """

    def __init__(self, mode, mixing_map=None, distortion=None, seed=0):
        if mode not in ("oracle", "distorted"):
            raise InvalidInputError(f"unknown encoder mode {mode!r}")
        if mode == "oracle" and mixing_map is None:
            raise InvalidInputError("oracle mode needs the mixing map")
        if mode == "distorted" and distortion is None:
            raise InvalidInputError("distorted mode needs a distortion")
        self.mode = mode
        self.mixing_map = mixing_map
        self.distortion = distortion
        self.seed = seed

    def __call__(self, latents, key=0):
        latents = np.asarray(latents, dtype=float)
        if self.mode == "oracle":
            return oracle_encoder(self.mixing_map.forward(latents), self.mixing_map)
        out = self.distortion.warp(latents)
        if self.distortion.noise_sigma > 0:
            rng = rng_stream(self.seed, "encode", key)
            out = out + self.distortion.noise_sigma * rng.normal(size=out.shape)
        return out


def write_encoded_csv(path, encoded, alphas=None):
    """Write ``t, zhat_*`` rows, with ``alpha_*`` truth columns when given."""
    encoded = np.asarray(encoded, dtype=float)
    T, d = encoded.shape
    header = ["t"] + [f"zhat_{i}" for i in range(d)]
    cols = [np.arange(T), encoded]
    if alphas is not None:
        alphas = np.asarray(alphas, dtype=float)
        header += [f"alpha_{k}" for k in range(alphas.shape[1])]
        cols.append(alphas)
    data = np.column_stack(cols)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="",
               fmt=["%d"] + ["%.17g"] * (data.shape[1] - 1))


def read_encoded_csv(path):
    """Read encodings from a CSV with ``zhat_*`` (or, failing that, ``z_*``) columns.

    Returns ``(encoded, alphas)``; ``alphas`` is ``None`` without truth columns.
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    enc = [i for i, h in enumerate(header) if h.startswith("zhat_")]
    if not enc:
        enc = [i for i, h in enumerate(header) if h.startswith("z_")]
    if not enc:
        raise InvalidInputError(f"{path}: no zhat_ or z_ columns")
    alpha = [i for i, h in enumerate(header) if h.startswith("alpha_")]
    return data[:, enc], (data[:, alpha] if alpha else None)
