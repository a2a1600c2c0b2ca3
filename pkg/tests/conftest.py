import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from extdesign import builtin_model, validate_design
from extdesign.examples import reference_values

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def refs():
    return reference_values()


@pytest.fixture(scope="session")
def bilinear():
    return builtin_model("bilinear2d")


@pytest.fixture(scope="session")
def pk1():
    return builtin_model("pk1")


@pytest.fixture(scope="session")
def ex2_vertices():
    return np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])


def reference_design(refs, example, name):
    entry = refs[example]["designs"][name]
    return validate_design(entry["support"], entry["weights"], renormalize=True)
