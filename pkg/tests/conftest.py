import numpy as np
import pytest

from surfch import build_icosphere


@pytest.fixture(scope="session")
def sphere3():
    return build_icosphere(3, 1.0)


@pytest.fixture(scope="session")
def sphere4():
    return build_icosphere(4, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
