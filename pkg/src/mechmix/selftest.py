"""Fast oracle checks behind ``mechmix selftest``.

Each check compares a library routine with an independent slow route on a
few small cases and returns a short detail string.  The full oracle suite
lives in the test directory; this is the subset that runs in seconds.
"""

import itertools

import numpy as np

from .basis import analytic_basis
from .diagnostics import ks_two_sample
from .generator import make_mixing_map
from .harness import build_world, preset, run_single
from .linalg import optimal_assignment, pseudoinverse, solve_tridiagonal
from .recovery import project_simplex, recover_pointwise


def _check_simplex_projection(rng):
    grid = np.array([(i, j, 200 - i - j) for i in range(201) for j in range(201 - i)]) / 200
    worst = 0.0
    for _ in range(20):
        v = rng.normal(size=3)
        best = grid[np.argmin(np.sum((grid - v) ** 2, axis=1))]
        worst = max(worst, np.abs(project_simplex(v) - best).max())
    assert worst <= 1e-2, worst
    return f"max gap to grid search {worst:.1e}"


def _check_tridiagonal(rng):
    worst = 0.0
    for T in (3, 17, 64):
        off = -rng.uniform(0.1, 2.0, T - 1)
        diag = rng.uniform(0.5, 1.5, T) + np.abs(np.r_[off, 0]) + np.abs(np.r_[0, off])
        rhs = rng.normal(size=T)
        dense = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        worst = max(worst, np.abs(solve_tridiagonal(diag, off, rhs)
                                  - np.linalg.solve(dense, rhs)).max())
    assert worst <= 1e-10, worst
    return f"max gap to dense solve {worst:.1e}"


def _check_assignment(rng):
    for _ in range(5):
        cost = rng.normal(size=(6, 6))
        best = min(sum(cost[i, p[i]] for i in range(6))
                   for p in itertools.permutations(range(6)))
        perm = optimal_assignment(cost)
        assert abs(cost[np.arange(6), perm].sum() - best) <= 1e-12
    return "matches enumeration on 5 random 6x6 costs"


def _check_pseudoinverse(rng):
    m = rng.normal(size=(8, 3))
    err = np.abs(pseudoinverse(m) @ m - np.eye(3)).max()
    assert err <= 1e-8, err
    return f"|pinv(m) m - I| = {err:.1e}"


def _check_mixing_round_trip(rng):
    mix = make_mixing_map(8, 16, 3, seed=0)
    z = rng.normal(size=(50, 8))
    err = np.abs(mix.inverse(mix.forward(z)) - z).max()
    assert err <= 1e-8, err
    return f"round-trip error {err:.1e}"


def _check_exactness(rng):
    cfg = preset("table2").replace(K_total=3, K_active=3, noise_sigma=0.0, activation_slope=1.0)
    ms, _, sampler = build_world(cfg, 0)
    basis = analytic_basis(ms, sampler.z_prev, sampler.z_prev2)
    grid = np.array([(i, j, 5 - i - j) for i in range(6) for j in range(6 - i)]) / 5
    res = recover_pointwise(sampler.mean(grid), basis)
    err = np.abs(res.raw_alphas - grid).max()
    assert err <= 1e-8, err
    return f"linear dynamics, 21 grid points, max error {err:.1e}"


def _check_ks(rng):
    x = rng.normal(size=100)
    stat, p = ks_two_sample(x, x.copy())
    assert stat == 0 and p > 0.99
    stat, p = ks_two_sample(rng.uniform(0, 1, 100), rng.uniform(10, 11, 100))
    assert stat == 1 and p < 1e-10
    return "identical and disjoint samples"


def _check_pipeline(rng):
    out = run_single(preset("table2"), seed=0, write=False)
    corr = out.scores.weight_corr
    assert corr >= 0.9 and out.diagnostics.bound_violations == 0, corr
    return f"default run weight correlation {corr:.3f}, no bound violations"


CHECKS = (
    ("simplex projection vs grid search", _check_simplex_projection),
    ("tridiagonal solve vs dense solve", _check_tridiagonal),
    ("assignment vs enumeration", _check_assignment),
    ("pseudoinverse identity", _check_pseudoinverse),
    ("observation map round trip", _check_mixing_round_trip),
    ("exact recovery under linear dynamics", _check_exactness),
    ("KS extreme cases", _check_ks),
    ("default pipeline run", _check_pipeline),
)


def run_selftest(write=print):
    """Run every check; returns the number of failures."""
    rng = np.random.default_rng(0)
    failures = 0
    for name, check in CHECKS:
        try:
            detail = check(rng)
            write(f"PASS  {name}: {detail}")
        except AssertionError as exc:
            failures += 1
            write(f"FAIL  {name}: {exc}")
    return failures
