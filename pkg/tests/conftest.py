import warnings

import numpy as np
import pytest

from graphsolver.mesh import ShapeSpec, generate_primitive
from graphsolver.rwg import build_rwg

warnings.filterwarnings("ignore", message="mean edge exceeds")


@pytest.fixture(scope="session")
def small_sphere():
    """80-triangle sphere of radius 0.2 m meshed for a 1 m wavelength."""
    spec = ShapeSpec("spheroid", {"Rx": 0.2, "Ry": 0.2, "Rz": 0.2})
    return generate_primitive(spec, 0.105, 1.0)


@pytest.fixture(scope="session")
def small_rwg(small_sphere):
    return build_rwg(small_sphere)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
