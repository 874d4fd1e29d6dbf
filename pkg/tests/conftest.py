"""Shared fixtures: canned synthetic segments reused across test modules."""

import numpy as np
import pytest

from vinit.synthetic import generate, make_config

# default simulated gyro bias, rad/s
TRUE_BG = np.array([0.02, -0.01, 0.03])


@pytest.fixture(scope="session")
def clean():
    """Noise-free sinusoid segment (no pixel covariances attached)."""
    return generate(make_config(seed=0))


@pytest.fixture(scope="session")
def noisy():
    """2 px anisotropic (10:1) pixel noise with per-feature covariances."""
    return generate(make_config(pixel_sigma_major=2.0, pixel_var_ratio=10.0, seed=1))
