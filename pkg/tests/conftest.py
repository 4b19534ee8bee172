from dataclasses import replace

import numpy as np
import pytest

from app.scenario import SystemConfig, default_config
from app.training import clear_solution_cache


@pytest.fixture
def cfg() -> SystemConfig:
    """The default uplink measurement setup (M=8, N=25, K=2, L=26)."""
    return default_config()


@pytest.fixture
def small_cfg() -> SystemConfig:
    return replace(default_config(), M=2, N=4, L=5)


@pytest.fixture
def noiseless_cfg() -> SystemConfig:
    return replace(default_config(), M=2, N=4, L=5, sigma_s_sq=0.0, sigma_sq=0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def fresh_solution_cache():
    clear_solution_cache()
    yield
    clear_solution_cache()
