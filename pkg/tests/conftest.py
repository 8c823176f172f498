import numpy as np
import pytest

from mcvdloc.scenario import FITTING_LAYOUT, cube_layout, make_scenario


@pytest.fixture
def cube4():
    """Four radius-4 receivers at alternate vertices of a half-side-5 cube."""
    return make_scenario((0, 10, 0), cube_layout(5.0), 4.0, 100.0, 10_000)


@pytest.fixture
def fitting():
    return make_scenario((0, 0, 0), FITTING_LAYOUT, 1.0, 100.0, 10_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
