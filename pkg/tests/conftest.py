import numpy as np
import pytest

from competefem.discretization import build_hierarchy, interval_mesh


@pytest.fixture(scope="session")
def unit_hierarchy():
    """Interval (0,1), 4 base elements, 5 levels (finest h = 1/64)."""
    return build_hierarchy(interval_mesh(0.0, 1.0, 4), 5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_function(h, level, rng, scale=1.0):
    return h.function(level, scale * rng.standard_normal(h.level(level).n_free))
