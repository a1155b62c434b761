import numpy as np
import pytest

from adaptguide.se3 import random_rotation
from adaptguide.synthetic import random_structure, toy_complex


def rigid_motion(rng):
    return random_rotation(rng), rng.uniform(-20.0, 20.0, size=3)


def matched_noise(base_rng, q=None):
    """Noise source whose translation draws are rotated by ``q``.

    Rotation noise lives in the body frame, so it is shared unchanged.
    """
    def draw(t, n):
        z = base_rng.standard_normal((n, 3))
        xi = base_rng.standard_normal((n, 3))
        return (z if q is None else z @ q.T), xi
    return draw


def zero_noise(t, n):
    return np.zeros((n, 3)), np.zeros((n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def complex_state():
    return toy_complex(0)


@pytest.fixture
def cloud():
    return random_structure(np.random.default_rng(3), 24)
