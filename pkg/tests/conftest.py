import numpy as np
import pytest

from nsf.galerkin import run
from nsf.presets import benchmark_s1, zero_scenario


@pytest.fixture(scope="session")
def s1_coarse():
    return run(benchmark_s1(N=8, M=8))


@pytest.fixture(scope="session")
def s1_fine():
    return run(benchmark_s1(N=16, M=16))


@pytest.fixture(scope="session")
def zero_traj():
    return run(zero_scenario())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
