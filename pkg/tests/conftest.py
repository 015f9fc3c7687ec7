import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relaxtoc.dynamics import (
    make_blowup_system,
    make_integrator_system,
    make_quenching_system,
)
from relaxtoc.target import Hyperplane, Point

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def quench_sys():
    return make_quenching_system()


@pytest.fixture(scope="session")
def quench_target():
    return Hyperplane(axis=0, level=1.0)


@pytest.fixture(scope="session")
def quench_y0():
    return np.array([0.0, 0.5])


@pytest.fixture(scope="session")
def toy_sys():
    return make_integrator_system(1)


@pytest.fixture(scope="session")
def toy_target():
    return Point(location=np.array([1.0]))


@pytest.fixture(scope="session")
def blowup_sys_g1():
    # gamma = p - 1 = 1: the scalar chart is z = 1/y with z' = -1 when u = 0,
    # so hit times against the chart origin are exact up to the integrator
    return make_blowup_system(n=1, p=2.0, gamma=1.0)


@pytest.fixture(scope="session")
def blowup_free_g1():
    # same chart, input matrix zeroed: y' = y^2 exactly
    return make_blowup_system(n=1, p=2.0, B=np.zeros((1, 1)), gamma=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
