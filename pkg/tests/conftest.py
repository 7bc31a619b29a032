from __future__ import annotations

import numpy as np
import pytest

from elreduce.commands.sweep import scale_config
from elreduce.config import DEFAULT_CONFIG, numerics
from elreduce.core.expansion import scale_report
from elreduce.core.model import make_model, solve_ground_state
from elreduce.core.reduction import ReductionEngine

DYADIC_MUS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


@pytest.fixture
def config() -> dict:
    return dict(DEFAULT_CONFIG)


@pytest.fixture
def six_config() -> dict:
    return {**DEFAULT_CONFIG, "n": 6, "tau": 0.01, "h0": 1.0, "f0": 0.2, "rho0": 0.05, "alpha": 0.0}


@pytest.fixture
def model7(config):
    return make_model(config)


@pytest.fixture
def ground7(model7):
    return solve_ground_state(model7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def engine7() -> ReductionEngine:
    cfg = {**DEFAULT_CONFIG, "grid_ratio": 1.06}
    model = make_model(cfg)
    return ReductionEngine(model, solve_ground_state(model), numerics(cfg))


@pytest.fixture(scope="session")
def state7(engine7):
    return engine7.pingpong_outer(1.0)


@pytest.fixture(scope="session")
def dyadic_reports():
    """Expansion reports at t = 1 over four halvings of mu, largest first."""
    cfg = {**DEFAULT_CONFIG, "grid_ratio": 1.06}
    return [scale_report(scale_config(cfg, mu), 1.0) for mu in DYADIC_MUS]
