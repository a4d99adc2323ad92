import os
import sys

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.geometry import build_sphere_grid, build_torus_grid  # noqa: E402

SEED = 0x5EED


@pytest.fixture(scope="session")
def sphere():
    return build_sphere_grid(1.0, 32)


@pytest.fixture(scope="session")
def small_sphere():
    return build_sphere_grid(1.0, 16)


@pytest.fixture(scope="session")
def torus():
    return build_torus_grid(2.0, 1.0, 64, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)
