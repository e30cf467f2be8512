import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibfpa.metrics import gaussian_window, psnr, ssim


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.01) == pytest.approx(40.0)
    assert psnr(a, a + 0.1, peak=10.0) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 5)))


@given(st.integers(0, 2**31))
def test_psnr_matches_second_implementation(seed):
    g = np.random.default_rng(seed)
    a, b = g.random((2, 9, 7))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())) / a.size
    assert psnr(a, b) == pytest.approx(-10 * math.log10(mse), rel=1e-12)
    assert psnr(a, b) == psnr(b, a)


def test_window_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0)
    assert w[5, 5] == w.max()


def test_ssim_identical_is_100(rng):
    x = rng.random((20, 20))
    assert ssim(x, x) == pytest.approx(100.0)


def test_ssim_negative_for_inverted_binary(rng):
    x = (rng.random((32, 32)) > 0.5).astype(float)
    assert ssim(x, 1 - x) < 0


def test_ssim_rejects_small_or_mismatched():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((20, 20)), np.zeros((20, 21)))


def ssim_loops(a, b):
    """Direct per-window statistics, one window at a time."""
    w = gaussian_window()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cv = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return 100 * np.mean(vals)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_ssim_window_oracle(seed):
    g = np.random.default_rng(seed)
    a = g.random((16, 16))
    b = np.clip(a + 0.2 * g.standard_normal((16, 16)), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_loops(a, b), abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
