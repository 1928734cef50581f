import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.models.field import OrientationField  # noqa: E402
from src.utils.tessellation import build_tessellation  # noqa: E402

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
CONFIG_PATH = os.path.join(REPO_ROOT, 'config', 'config.yaml')


@pytest.fixture
def tess0():
    return build_tessellation(0)


@pytest.fixture
def tess1():
    return build_tessellation(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_field(tess1, rng):
    """Positive random field on a 4^3 grid at order 1."""
    return OrientationField(rng.uniform(1.0, 2.0, size=(4, 4, 4, tess1.n_vertices)), 1.0, tess1)


@pytest.fixture
def config_path():
    return CONFIG_PATH
