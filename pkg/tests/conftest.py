import numpy as np
import pytest

from mpsim import build_grid
from mpsim.scenario import ConstantDemand


@pytest.fixture(scope="session")
def grid11():
    return build_grid(1, 1)


@pytest.fixture(scope="session")
def grid22():
    return build_grid(2, 2)


@pytest.fixture(scope="session")
def grid44():
    return build_grid(4, 4)


@pytest.fixture(scope="session")
def low_demand():
    return ConstantDemand(600.0)


def hold_phase_schedule(phase: int, n_int: int = 1, n_dec: int = 400) -> np.ndarray:
    return np.full((n_dec, n_int), phase, np.int32)
