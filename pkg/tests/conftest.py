import numpy as np
import pytest

from wkamlab.geometry import TorusGrid
from wkamlab.models import make_flat, make_hamex, make_twotwo


@pytest.fixture(scope="session")
def flat_pair():
    return make_flat()


@pytest.fixture(scope="session")
def hamex_pair():
    return make_hamex()


@pytest.fixture(scope="session")
def twotwo_pair():
    return make_twotwo()


@pytest.fixture
def grid16():
    return TorusGrid((16, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(11)
