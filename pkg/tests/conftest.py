import numpy as np
import pytest

from rrhinf.model import chua_config, load_problem
from rrhinf.synthesis import synthesize


@pytest.fixture(scope="session")
def chua():
    return load_problem(chua_config(period=0.1, eps=0.1))


@pytest.fixture(scope="session")
def design(chua):
    return synthesize(chua)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def certification(design):
    from rrhinf.verify import certify
    return certify(design)
