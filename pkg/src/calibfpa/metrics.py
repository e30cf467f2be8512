"""Image quality metrics: peak SNR and single-scale SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy import signal

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(ref: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` when the images are equal.

    The peak is a fixed convention (not taken from either image), so the
    value is symmetric in ``ref`` and ``test``.
    """
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    if ref.size == 0:
        raise ValueError("empty images")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(ref: np.ndarray, test: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, as a percentage."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    if ref.ndim != 2 or min(ref.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs 2-D images of at least {SSIM_WIN}x{SSIM_WIN}, got {ref.shape}")
    w = gaussian_window()

    def filt(img):
        return signal.correlate2d(img, w, mode="valid")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(ref), filt(test)
    var_a = filt(ref * ref) - mu_a**2
    var_b = filt(test * test) - mu_b**2
    cov = filt(ref * test) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(100.0 * np.mean(num / den))
