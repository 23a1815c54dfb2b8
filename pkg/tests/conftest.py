import numpy as np
import pytest

from cbct.geometry import Volume, make_geometry
from cbct.projector import back_project, counters, forward_project


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the projector kernels once so timed tests measure algorithm cost."""
    g = make_geometry(4, 1, 10.0, 1.0)
    proj = forward_project(Volume(np.zeros((4, 4, 4)), g), g)
    back_project(proj, g)
    back_project(proj, g, fdk_weighting=True)
    counters.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
