import numpy as np
import pytest

from attitude_hydro.field import Operators, build_grid
from attitude_hydro.gci import transport_coefficients
from attitude_hydro.vmf import VmfParams


@pytest.fixture(scope="session")
def grid():
    return build_grid()


@pytest.fixture(scope="session")
def ops(grid):
    return Operators(grid)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(9, 6, 9)


@pytest.fixture(scope="session")
def small_ops(small_grid):
    return Operators(small_grid)


@pytest.fixture(scope="session")
def params():
    return VmfParams(nu0=1.0, d=1.0)


@pytest.fixture(scope="session")
def coeffs(params):
    return transport_coefficients(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
