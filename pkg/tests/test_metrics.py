import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mechmix.errors import InvalidInputError, UndefinedCorrelationError
from mechmix.generator import build_mechanism_set, make_schedule
from mechmix.harness import preset, run_single
from mechmix.metrics import (ScoreCard, mae, mcc, mse, per_component_correlation,
                             w_trajectory_correlation, weight_correlation)

from oracles import rank_correlation_by_definition

FAMILIES = ("sequential", "overlapping", "linear", "oscillating")


def test_mcc_identity(rng):
    z = rng.normal(size=(100, 5))
    score, perm = mcc(z, z)
    assert score == pytest.approx(1.0) and perm.tolist() == list(range(5))


def test_mcc_permuted_copy(rng):
    z = rng.normal(size=(100, 5))
    p = np.array([2, 4, 0, 1, 3])
    score, perm = mcc(z[:, p], z)
    assert score == pytest.approx(1.0)
    assert perm.tolist() == p.tolist()
    assert np.array_equal(z[:, p][:, np.argsort(perm)], z)


def test_mcc_spearman_vs_pearson_under_warp(rng):
    z = rng.normal(size=(300, 4))
    warped = np.column_stack([np.exp(z[:, 1]), z[:, 3] ** 3, np.tanh(2 * z[:, 0]), -z[:, 2]])
    assert mcc(warped, z, "spearman_abs")[0] >= 1 - 1e-6
    assert mcc(warped, z, "pearson_abs")[0] < 1.0


def test_mcc_errors(rng):
    z = rng.normal(size=(10, 3))
    flat = z.copy()
    flat[:, 1] = 1.0
    with pytest.raises(UndefinedCorrelationError):
        mcc(flat, z)
    with pytest.raises(InvalidInputError):
        mcc(z[:, :2], z)
    with pytest.raises(InvalidInputError):
        mcc(z[:2], z[:2])
    with pytest.raises(InvalidInputError):
        mcc(z, z, "kendall")


def test_spearman_matches_definition_and_frozen(frozen):
    rec = frozen["spearman"]
    x, y = np.array(rec["x"]), np.array(rec["y"])
    lib = mcc(x[:, None], y[:, None])[0]
    assert lib == pytest.approx(abs(rank_correlation_by_definition(x, y)), abs=1e-12)
    assert lib == pytest.approx(abs(rec["rho"]), abs=1e-12)


@given(st.integers(0, 10_000))
def test_mcc_invariant_to_joint_permutation(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(50, 5)), r.normal(size=(50, 5))
    b = b + a
    p = r.permutation(5)
    assert mcc(a[:, p], b[:, p])[0] == pytest.approx(mcc(a, b)[0], abs=1e-12)


@given(st.integers(0, 10_000))
def test_spearman_mcc_invariant_to_monotone_warp(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(60, 4)), r.normal(size=(60, 4))
    b = b + 0.5 * a
    warped = np.column_stack([np.exp(a[:, 0]), a[:, 1] ** 3, -np.arctan(a[:, 2]), 3 * a[:, 3] - 1])
    assert mcc(warped, b)[0] == pytest.approx(mcc(a, b)[0], abs=1e-12)
    assert mcc(b, warped)[0] == pytest.approx(mcc(b, a)[0], abs=1e-12)


def test_weight_corr_exact():
    a = make_schedule("sequential", 50, 5, active_domains=(0, 2, 4)).alphas
    assert weight_correlation(a, a) == pytest.approx(1.0)


def test_weight_corr_affine():
    a = make_schedule("overlapping", 80, 3).alphas
    assert weight_correlation(0.6 * a + 0.1, a) == pytest.approx(1.0)
    distorted = a * np.array([0.5, 1.5, 0.8]) + np.array([0.1, -0.2, 0.05])
    assert np.allclose(per_component_correlation(distorted, a), 1.0)
    assert weight_correlation(distorted, a) < 1.0


def test_weight_corr_anti_phase():
    t = np.arange(100)
    a1 = 0.5 * (1 + np.sin(2 * np.pi * t / 50))
    truth = np.column_stack([a1, 1 - a1])
    assert weight_correlation(truth[:, ::-1], truth) < 0


def test_weight_corr_zero_variance():
    truth = np.tile([0.5, 0.5], (10, 1))
    with pytest.raises(UndefinedCorrelationError):
        weight_correlation(truth, truth)


@given(st.integers(0, 10_000))
def test_weight_corr_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.dirichlet(np.ones(3), 30), r.dirichlet(np.ones(3), 30)
    assert weight_correlation(a, b) == pytest.approx(weight_correlation(b, a), abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_w_trajectory_self_correlation(family):
    ms = build_mechanism_set(8, 5, 0.5, seed=0)
    a = make_schedule(family, 40, 5).alphas
    assert w_trajectory_correlation(ms, a, a) == pytest.approx(1.0, abs=1e-12)


def test_mae_examples():
    truth = np.array([[0.3, 0.7], [0.6, 0.4]])
    assert mae(truth, truth) == 0
    assert mae(truth + np.array([0.1, 0.0]), truth) == pytest.approx(0.05)
    assert mse(truth + np.array([0.1, 0.0]), truth) == pytest.approx(0.005)
    with pytest.raises(InvalidInputError):
        mae(truth, truth[:1])


def test_scorecard_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        ScoreCard(mcc=float("nan"), weight_corr=1.0, mae_raw=0.0, w_traj_corr=1.0)


def test_low_active_count_keeps_both_correlations_high():
    cfg = preset("table5").replace(K_active=3)
    s = run_single(cfg, seed=0, write=False).scores
    assert s.weight_corr >= 0.95 and s.w_traj_corr >= 0.95


def test_near_capacity_keeps_w_correlation():
    cfg = preset("table5").replace(K_active=7)
    s = run_single(cfg, seed=0, write=False).scores
    assert s.w_traj_corr >= 0.99
    assert s.weight_corr < s.w_traj_corr


def test_default_calibrated_mae():
    s = run_single(preset("table2"), seed=0, write=False).scores
    assert s.mae_cal <= 0.1
