import numpy as np
import pytest

from blowup_lab.core import derive_params
from blowup_lab.evolution import LyapunovPerronSolver
from blowup_lab.grid import make_grid
from blowup_lab.linop import build_operators, spectral_projection


@pytest.fixture(scope="session")
def params5():
    return derive_params(5.0, 0.1)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(64)


@pytest.fixture(scope="session")
def ops5(grid64, params5):
    return build_operators(grid64, params5)


@pytest.fixture(scope="session")
def proj5(ops5):
    return spectral_projection(ops5)


@pytest.fixture(scope="session")
def solver5(ops5, proj5):
    return LyapunovPerronSolver(ops5, proj5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
