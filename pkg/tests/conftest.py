import numpy as np
import pytest
from hypothesis import settings

from orliczlab.nfunc import SpatialDomain

settings.register_profile("lab", max_examples=40, deadline=None)
settings.load_profile("lab")


@pytest.fixture
def unit1():
    return SpatialDomain((1.0,))


@pytest.fixture
def unit2():
    return SpatialDomain((1.0, 1.0))


@pytest.fixture
def pi1():
    return SpatialDomain((np.pi,))
