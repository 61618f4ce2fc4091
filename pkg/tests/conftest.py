import numpy as np
import pytest

from compliant_control import data_file
from compliant_control.model import load_model


@pytest.fixture(scope="session")
def planar():
    return load_model(data_file("planar2.model"))


@pytest.fixture(scope="session")
def gen3():
    return load_model(data_file("gen3_like.model"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_q(model, rng):
    """Random configuration inside the joint limits (clipped to +-pi)."""
    lo = np.maximum(model.q_min, -np.pi)
    hi = np.minimum(model.q_max, np.pi)
    return rng.uniform(lo, hi)
