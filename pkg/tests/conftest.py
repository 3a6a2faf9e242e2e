import numpy as np
import pytest
from hypothesis import settings

from massgame import GridDensity

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def hat(center=0.0, half_width=1.0, height=1.0):
    return lambda p: height * np.clip(1.0 - np.abs(p[:, 0] - center) / half_width, 0.0, None)


def make_grid(fn, lo, hi, cells):
    return GridDensity.from_function(fn, (lo,), ((hi - lo) / cells,), (cells,))


@pytest.fixture
def hat_density():
    """Unit-mass hat on [-1, 1], 2048 cells over [-4, 4]."""
    return make_grid(hat(), -4.0, 4.0, 2048)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)
