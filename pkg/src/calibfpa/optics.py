"""Physical forward model of the compressive FPA camera.

A measurement for snapshot ``i`` is

    y_i = D(h_R * (mask_i . x)) + n_i

with ``D`` an averaging box downsampler, ``h_R`` the relay-lens PSF and
``n_i`` white Gaussian noise. The blur-free target used for calibration is
``D(mask_i . x)``.

Conventions shared by every module in the package:

* ``D`` averages each ``s1 x s2`` block (unit-sum box filter).
* Convolution is a true convolution with zero padding and "same" output size.
* Images are 2-D float64 arrays, row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import signal

# First positive zero of J1.
J1_FIRST_ZERO = 3.8317059702075125

_SERIES_LIMIT = 12.0
_FFT_WORK_THRESHOLD = 2_000_000


# ---------------------------------------------------------------------------
# Bessel J1
# ---------------------------------------------------------------------------


def _j1_series(t: np.ndarray) -> np.ndarray:
    half_sq = -(t / 2.0) ** 2
    term = t / 2.0
    total = term.copy()
    for k in range(60):
        term = term * half_sq / ((k + 1) * (k + 2))
        total += term
        if np.all(np.abs(term) < 1e-18):
            break
    return total


def _j1_asymptotic(t: np.ndarray) -> np.ndarray:
    # Hankel expansion J1(t) = sqrt(2/(pi t)) (P cos chi - Q sin chi).
    mu = 4.0
    p = np.ones_like(t)
    q = np.zeros_like(t)
    a = 1.0
    inv = 1.0 / t
    power = np.ones_like(t)
    prev = np.full_like(t, np.inf)
    active = np.ones(t.shape, dtype=bool)
    for k in range(1, 40):
        a = a * (mu - (2 * k - 1) ** 2) / (k * 8.0)
        power = power * inv
        term = a * power
        mag = np.abs(term)
        # stop each entry at its smallest term (optimal truncation)
        active &= mag < prev
        if not active.any():
            break
        sign = -1.0 if (k // 2) % 2 else 1.0
        contrib = np.where(active, sign * term, 0.0)
        if k % 2:
            q += contrib
        else:
            p += contrib
        prev = np.where(active, mag, prev)
    chi = t - 0.75 * np.pi
    return np.sqrt(2.0 / (np.pi * t)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j1(t) -> np.ndarray:
    """Bessel function of the first kind, order one.

    Power series below ``|t| = 12`` and the Hankel asymptotic expansion
    above; absolute error stays below 1e-10 on the real line.
    """
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    out = np.empty_like(a)
    small = a < _SERIES_LIMIT
    if small.any():
        out[small] = _j1_series(a[small])
    if (~small).any():
        out[~small] = _j1_asymptotic(a[~small])
    return np.sign(t) * out


# ---------------------------------------------------------------------------
# PSF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Psf:
    """Normalized nonnegative 2-D kernel with an odd side length.

    ``radius`` is set when the kernel came from :func:`airy_psf`.
    """

    kernel: np.ndarray
    radius: Optional[float] = None

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError(f"PSF kernel must be square with odd size, got {k.shape}")
        if np.any(k < 0):
            raise ValueError("PSF kernel has negative entries")
        object.__setattr__(self, "kernel", k)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]


def delta_psf(size: int = 1) -> Psf:
    """Discrete Dirac delta of odd ``size``."""
    if size < 1 or size % 2 == 0:
        raise ValueError("delta PSF size must be odd and positive")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return Psf(k)


def airy_psf(radius: float, size: int = 81) -> Psf:
    """Airy-disk intensity PSF whose first dark ring sits at ``radius`` pixels.

    Parameters
    ----------
    radius : float
        Radius of the first intensity null, in HR pixels.
    size : int
        Odd kernel side length (>= 3). The pattern is truncated to this
        window and renormalized to unit sum.
    """
    if not radius > 0:
        raise ValueError(f"Airy radius must be positive, got {radius}")
    if size < 3 or size % 2 == 0:
        raise ValueError(f"PSF size must be odd and >= 3, got {size}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    rho = np.sqrt(ax[:, None] ** 2 + ax[None, :] ** 2)
    t = J1_FIRST_ZERO * rho / radius
    amp = np.ones_like(t)
    nz = t > 0
    amp[nz] = 2.0 * bessel_j1(t[nz]) / t[nz]
    kernel = amp**2
    kernel /= kernel.sum()
    return Psf(kernel, float(radius))


def _as_kernel(psf) -> np.ndarray:
    return psf.kernel if isinstance(psf, Psf) else np.asarray(psf, dtype=np.float64)


# ---------------------------------------------------------------------------
# Convolution and downsampling
# ---------------------------------------------------------------------------


def convolve2d(img: np.ndarray, psf: Union[Psf, np.ndarray], method: str = "auto") -> np.ndarray:
    """Same-size 2-D convolution with zero padding.

    ``method`` is ``"direct"``, ``"fft"`` or ``"auto"``; auto picks FFT once
    ``img.size * kernel.size`` exceeds a fixed work threshold. Both paths agree
    to ~1e-12 relative.
    """
    img = np.asarray(img, dtype=np.float64)
    k = _as_kernel(psf)
    if method == "auto":
        method = "fft" if img.size * k.size > _FFT_WORK_THRESHOLD else "direct"
    if method == "direct":
        return signal.convolve2d(img, k, mode="same", boundary="fill", fillvalue=0.0)
    if method == "fft":
        return signal.fftconvolve(img, k, mode="same")
    raise ValueError(f"unknown convolution method {method!r}")


SrLike = Union[int, Tuple[int, int]]


def as_sr(sr: SrLike) -> Tuple[int, int]:
    """Normalize a super-resolution factor to ``(s1, s2)``."""
    if isinstance(sr, (int, np.integer)):
        s1 = s2 = int(sr)
    else:
        s1, s2 = (int(v) for v in sr)
    if s1 < 1 or s2 < 1:
        raise ValueError(f"super-resolution factors must be >= 1, got {(s1, s2)}")
    return s1, s2


def lr_shape(hr_shape, sr: SrLike) -> Tuple[int, int]:
    s1, s2 = as_sr(sr)
    n1, n2 = hr_shape
    if n1 % s1 or n2 % s2:
        raise ValueError(f"HR shape {tuple(hr_shape)} not divisible by block {(s1, s2)}")
    return n1 // s1, n2 // s2


def box_downsample(img: np.ndarray, sr: SrLike) -> np.ndarray:
    """Average each ``s1 x s2`` block into one LR pixel."""
    img = np.asarray(img, dtype=np.float64)
    s1, s2 = as_sr(sr)
    m1, m2 = lr_shape(img.shape, (s1, s2))
    return img.reshape(m1, s1, m2, s2).mean(axis=(1, 3))


def _check_mask(x: np.ndarray, mask: np.ndarray):
    if x.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match scene shape {x.shape}")


def forward_measure(
    x: np.ndarray,
    mask: np.ndarray,
    psf: Union[Psf, np.ndarray],
    sr: SrLike,
    noise_sigma: float = 0.0,
    rng=None,
) -> np.ndarray:
    """Simulate one blurred, downsampled, noisy snapshot.

    Parameters
    ----------
    x : (N1, N2) array
        HR scene.
    mask : (N1, N2) array
        Aperture transmission for this snapshot.
    psf : Psf or array
        Relay-lens PSF.
    sr : int or (s1, s2)
        Block size of one LR pixel.
    noise_sigma : float
        Standard deviation of additive white Gaussian noise.
    rng : int, numpy Generator or None
        Seed or generator for the noise; only consulted when
        ``noise_sigma > 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_mask(x, mask)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    y = box_downsample(convolve2d(mask * x, psf), sr)
    if noise_sigma > 0:
        gen = np.random.default_rng(rng)
        y = y + gen.normal(0.0, noise_sigma, size=y.shape)
    return y


def ideal_measure(x: np.ndarray, mask: np.ndarray, sr: SrLike) -> np.ndarray:
    """Blur-free, noise-free snapshot: the calibration target."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_mask(x, mask)
    return box_downsample(mask * x, sr)


def lr_psf(psf: Union[Psf, np.ndarray], sr: SrLike) -> Psf:
    """Project an HR PSF onto the LR grid.

    Sums the kernel over ``s1 x s2`` blocks aligned so that the HR center
    falls in the central LR pixel, then renormalizes.
    """
    k = _as_kernel(psf)
    s1, s2 = as_sr(sr)
    c = k.shape[0] // 2
    # LR pixel j covers HR rows [c - s//2 + j*s, c - s//2 + (j+1)*s)
    def pads(s):
        start = c - s // 2
        n = max(-(-start // s), -(-(k.shape[0] - start) // s) - 1, 0)
        lo = n * s - start
        hi = (2 * n + 1) * s - lo - k.shape[0]
        return lo, hi, n

    lo1, hi1, n1 = pads(s1)
    lo2, hi2, n2 = pads(s2)
    kp = np.pad(k, ((lo1, hi1), (lo2, hi2)))
    out = kp.reshape(2 * n1 + 1, s1, 2 * n2 + 1, s2).sum(axis=(1, 3))
    if out.shape[0] != out.shape[1]:
        side = max(out.shape)
        out = np.pad(
            out,
            (((side - out.shape[0]) // 2,) * 2, ((side - out.shape[1]) // 2,) * 2),
        )
    return Psf(out / out.sum())
