import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostforge.errors import ConfigError
from ghostforge.filters import BILATERAL_GRID, DEFAULT_BILATERAL, PASSTHROUGH, BilateralConfig, bilateral_filter

from helpers import gaussian_blur_oracle


def test_defaults():
    assert (DEFAULT_BILATERAL.radius, DEFAULT_BILATERAL.sigma_spatial, DEFAULT_BILATERAL.sigma_range) == (3, 2.0, 0.1)


@pytest.mark.parametrize("c", [0.0, 0.37, 1.0])
def test_constant_fixed_point(c):
    img = np.full((9, 7), c)
    assert np.array_equal(bilateral_filter(img), img)


def test_range_bounded():
    rng = np.random.default_rng(0)
    for k in range(100):
        img = rng.random((12, 10)) * rng.random()
        out = bilateral_filter(img, BilateralConfig(2, 1.5, 0.2))
        assert out.min() >= img.min() and out.max() <= img.max()


def test_gaussian_limit():
    img = np.random.default_rng(1).random((10, 8))
    out = bilateral_filter(img, BilateralConfig(radius=3, sigma_spatial=2.0, sigma_range=1e6))
    assert np.abs(out - gaussian_blur_oracle(img, 3, 2.0)).max() < 1e-6


def test_edge_preserved_better_than_blur():
    img = np.zeros((16, 16))
    img[:, 8:] = 1.0
    out = bilateral_filter(img, BilateralConfig(3, 2.0, 0.1))
    blur = gaussian_blur_oracle(img, 3, 2.0)
    assert np.abs(out - img).max() < 1e-6 < np.abs(blur - img).max()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_transpose_symmetry(seed):
    img = np.random.default_rng(seed).random((9, 13))
    a = bilateral_filter(img.T)
    b = bilateral_filter(img).T
    assert np.abs(a - b).max() < 1e-12


def test_noise_reduction():
    rng = np.random.default_rng(2)
    clean = np.zeros((32, 32))
    clean[8:24, 8:24] = 0.8
    noisy = np.clip(clean + rng.normal(0, 0.05, clean.shape), 0, 1)
    out = bilateral_filter(noisy)
    assert np.mean((out - clean) ** 2) < 0.5 * np.mean((noisy - clean) ** 2)


def test_passthrough_and_config_errors():
    img = np.random.default_rng(3).random((5, 5))
    assert np.array_equal(bilateral_filter(img, PASSTHROUGH), img)
    with pytest.raises(ConfigError):
        BilateralConfig(radius=0)
    with pytest.raises(ConfigError):
        BilateralConfig(sigma_range=0.0)
    assert len(set(BILATERAL_GRID)) == len(BILATERAL_GRID)
