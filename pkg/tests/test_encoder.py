import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mechmix.basis import BasisWarning, ConditionalSampler
from mechmix.encoder import (EncoderDistortion, EncoderSim, encode, identity_distortion,
                             oracle_encoder, random_distortion, read_encoded_csv,
                             write_encoded_csv)
from mechmix.errors import InvalidDistortionError, InvalidInputError, InversionError
from mechmix.generator import build_mechanism_set, make_mixing_map, make_schedule
from mechmix.metrics import mcc, weight_correlation
from mechmix.recovery import recover_pointwise

from oracles import bisection_inverse


def test_identity_distortion_is_exact(rng):
    z = rng.normal(size=(40, 6))
    assert np.array_equal(encode(z, identity_distortion(6)), z)


def test_pure_permutation_reorders_columns(rng):
    z = rng.normal(size=(40, 6))
    perm = np.array([3, 0, 5, 1, 4, 2])
    dist = EncoderDistortion(perm, np.ones(6), np.zeros(6), np.ones(6), np.zeros(6))
    assert np.array_equal(encode(z, dist), z[:, perm])


def test_unwarp_matches_bisection_oracle(rng):
    dist = random_distortion(8, seed=3)
    z = rng.normal(size=(200, 8)) * 2
    zhat = encode(z, dist)
    assert np.abs(dist.unwarp(zhat) - z).max() <= 1e-8
    # independent route: scalar bisection per coordinate
    u = np.empty_like(z)
    for i in range(8):
        h = lambda x, i=i: dist.a[i] * x + dist.b[i] * np.tanh(dist.c[i] * x) + dist.shift[i]  # noqa: E731
        u[:, dist.perm[i]] = bisection_inverse(h, zhat[:, i])
    assert np.abs(u - z).max() <= 1e-8


def test_unwarp_against_frozen_values(frozen):
    rec = frozen["unwarp"]
    p = rec["params"]
    dist = EncoderDistortion([0], [p["a"]], [p["b"]], [p["c"]], [p["shift"]])
    z = dist.unwarp(np.array(rec["y"])[:, None])[:, 0]
    assert np.abs(z - np.array(rec["z"])).max() <= 1e-10


def test_oracle_encoder_round_trip(rng):
    mix = make_mixing_map(8, 16, 3, seed=4)
    z = rng.normal(size=(300, 8))
    assert np.abs(oracle_encoder(mix.forward(z), mix) - z).max() <= 1e-8


def test_oracle_encoder_depth_zero_truncates(rng):
    mix = make_mixing_map(5, 9, 0, seed=0)
    z = rng.normal(size=(20, 5))
    x = mix.forward(z)
    assert np.array_equal(oracle_encoder(x, mix), x[:, :5])


def test_oracle_encoder_off_manifold(rng):
    mix = make_mixing_map(8, 16, 3, seed=4)
    x = mix.forward(rng.normal(size=(5, 8))) + 1e-2
    with pytest.raises(InversionError):
        oracle_encoder(x, mix)


def test_invalid_distortion_rejected():
    with pytest.raises(InvalidDistortionError):
        EncoderDistortion([0, 1], [1.0, 0.5], [0.0, 0.5], [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(InvalidDistortionError):
        EncoderDistortion([0, 0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(InvalidDistortionError):
        identity_distortion(3).with_noise(-0.1)


def test_encode_dimension_mismatch(rng):
    with pytest.raises(InvalidInputError):
        encode(rng.normal(size=(4, 3)), identity_distortion(5))


@given(st.integers(0, 10_000), st.booleans())
def test_warp_derivative_positive_by_finite_differences(seed, decreasing):
    dist = random_distortion(6, seed, allow_decreasing=decreasing)
    z = np.random.default_rng(seed).normal(size=(100, 6)) * 2
    h = 1e-6
    fd = (dist.warp(z + h) - dist.warp(z - h)) / (2 * h)
    sign = np.where(dist.flip, -1.0, 1.0)
    assert np.all(sign * fd > 0)
    assert np.allclose(fd, dist.derivative(z), atol=1e-6)


@given(st.integers(0, 10_000), st.booleans())
def test_rank_mcc_is_one_under_any_noise_free_distortion(seed, decreasing):
    dist = random_distortion(6, seed, allow_decreasing=decreasing)
    z = np.random.default_rng(seed + 1).normal(size=(300, 6))
    assert mcc(encode(z, dist), z)[0] >= 1 - 1e-6


@given(st.integers(0, 10_000))
def test_noise_free_encode_deterministic_and_invertible(seed):
    dist = random_distortion(5, seed, allow_decreasing=True)
    z = np.random.default_rng(seed).normal(size=(50, 5))
    a, b = encode(z, dist, seed=1), encode(z, dist, seed=2)
    assert np.array_equal(a, b)
    assert np.abs(dist.unwarp(a) - z).max() <= 1e-8


def test_representation_noise_is_seeded(rng):
    dist = random_distortion(4, 0, noise_sigma=0.1)
    z = rng.normal(size=(1000, 4))
    a = encode(z, dist, seed=5)
    assert np.array_equal(a, encode(z, dist, seed=5))
    assert np.std(a - dist.warp(z)) == pytest.approx(0.1, rel=0.1)


def test_recovery_survives_decreasing_warps():
    ms = build_mechanism_set(8, 3, 0.5, seed=0, activation_slope=1.0)
    dist = random_distortion(8, seed=11, allow_decreasing=True)
    assert dist.flip.any()
    schedule = make_schedule("sequential", 60, 3)
    results = []
    for enc in (EncoderSim("distorted", distortion=identity_distortion(8)),
                EncoderSim("distorted", distortion=dist)):
        sampler = ConditionalSampler(ms, 0.0, 0, enc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BasisWarning)
            basis = sampler.basis((0, 1, 2))
        res = recover_pointwise(sampler.mean(schedule.alphas), basis)
        results.append(weight_correlation(res.raw_alphas, schedule.alphas))
    assert results[0] >= 0.999
    assert results[1] >= 0.95


def test_encoder_sim_modes():
    with pytest.raises(InvalidInputError):
        EncoderSim("learned")
    with pytest.raises(InvalidInputError):
        EncoderSim("oracle")
    with pytest.raises(InvalidInputError):
        EncoderSim("distorted")


def test_encoded_csv_round_trip(tmp_path, rng):
    enc, alphas = rng.normal(size=(12, 4)), rng.dirichlet(np.ones(3), size=12)
    path = tmp_path / "enc.csv"
    write_encoded_csv(path, enc, alphas)
    back, back_alphas = read_encoded_csv(path)
    assert np.array_equal(back, enc) and np.array_equal(back_alphas, alphas)
    assert path.read_text().startswith("t,zhat_0")
    write_encoded_csv(path, enc)
    assert read_encoded_csv(path)[1] is None
