import numpy as np
import pytest
from scipy.special import sph_harm_y
from scipy.spatial.transform import Rotation


def scipy_real_sh(l, m, dirs):
    """Real harmonics from scipy's complex ones, Condon-Shortley phase kept."""
    dirs = np.atleast_2d(dirs)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    if m == 0:
        return sph_harm_y(l, 0, theta, phi).real
    Y = sph_harm_y(l, abs(m), theta, phi)
    sign = (-1) ** m
    return np.sqrt(2.0) * sign * (Y.real if m > 0 else Y.imag)


def unit_rows(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(seed):
    return Rotation.random(random_state=seed).as_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
