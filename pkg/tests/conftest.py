import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def frozen():
    return json.loads((DATA / "frozen_oracles.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_world():
    """Mechanisms, schedule, sampler and basis of the default configuration, seed 0."""
    from mechmix.basis import BasisWarning
    from mechmix.harness import build_world, preset
    cfg = preset("table2")
    ms, schedule, sampler = build_world(cfg, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BasisWarning)
        basis = sampler.basis(cfg.resolved_active())
    return cfg, ms, schedule, sampler, basis


@pytest.fixture(scope="session")
def scheme_sweeps():
    """Noise and perturbation-norm sweeps of the default configuration, 10 seeds each."""
    from scenarios import cached_sweep
    return {name: cached_sweep(name) for name in ("table3_scheme1", "table3_scheme2")}


@pytest.fixture(scope="session")
def table7_sweep():
    """Active-domain sweep K_active = 2..9 of the ten-mechanism configuration, 10 seeds."""
    from scenarios import cached_sweep
    return cached_sweep("table7")
