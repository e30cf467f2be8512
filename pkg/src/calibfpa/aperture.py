"""Coded apertures, alignment markers and piezo-stage snapshot schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from calibfpa.optics import lr_shape


@dataclass(frozen=True)
class MarkerSpec:
    """Corner alignment markers, ``size x size`` LR pixels each.

    The central LR pixel is fully transparent and its ring fully opaque.
    """

    size: int = 3

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError("marker size must be an odd positive number of LR pixels")


@dataclass(frozen=True)
class CodedAperture:
    base_mask: np.ndarray
    block: Tuple[int, int]
    open_ratio: float
    markers: Optional[MarkerSpec] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.base_mask.shape

    @property
    def lr_shape(self) -> Tuple[int, int]:
        return lr_shape(self.base_mask.shape, self.block)


def _ones_per_block(p: float, s: int) -> int:
    count = round(p * s)
    if abs(p * s - count) > 1e-6:
        raise ValueError(f"open ratio {p} does not give an integer count on {s}-pixel blocks")
    return int(count)


def generate_aperture(n1: int, n2: int, s1: int, s2: int, p: float = 0.8, seed=0) -> CodedAperture:
    """Random binary aperture with exactly ``p*s1*s2`` open pixels per block.

    Each ``s1 x s2`` block picks its transparent pixels uniformly at random
    and independently of the other blocks.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"open ratio must lie in (0, 1], got {p}")
    m1, m2 = lr_shape((n1, n2), (s1, s2))
    s = s1 * s2
    count = _ones_per_block(p, s)
    rng = np.random.default_rng(seed)
    pattern = np.zeros(s, dtype=np.uint8)
    pattern[:count] = 1
    blocks = rng.permuted(np.tile(pattern, (m1 * m2, 1)), axis=1)
    mask = blocks.reshape(m1, m2, s1, s2).transpose(0, 2, 1, 3).reshape(n1, n2)
    return CodedAperture(mask, (s1, s2), float(p))


def marker_lr_mask(lr: Tuple[int, int], spec: MarkerSpec) -> np.ndarray:
    """Boolean LR map of pixels covered by the four corner markers."""
    m1, m2 = lr
    k = spec.size
    out = np.zeros((m1, m2), dtype=bool)
    for r0 in (0, m1 - k):
        for c0 in (0, m2 - k):
            out[r0 : r0 + k, c0 : c0 + k] = True
    return out


def apply_markers(ap: CodedAperture, spec: MarkerSpec = MarkerSpec()) -> CodedAperture:
    """Overwrite the four LR corners with alignment markers."""
    s1, s2 = ap.block
    m1, m2 = ap.lr_shape
    k = spec.size
    if m1 < 2 * k or m2 < 2 * k:
        raise ValueError(f"LR grid {(m1, m2)} too small for four {k}x{k} corner markers")
    lr_pattern = np.zeros((k, k), dtype=np.uint8)
    lr_pattern[k // 2, k // 2] = 1
    hr_pattern = np.kron(lr_pattern, np.ones((s1, s2), dtype=np.uint8))
    mask = ap.base_mask.copy()
    h, w = hr_pattern.shape
    n1, n2 = mask.shape
    for r0 in (0, n1 - h):
        for c0 in (0, n2 - w):
            mask[r0 : r0 + h, c0 : c0 + w] = hr_pattern
    return replace(ap, base_mask=mask, markers=spec)


def shift_mask(ap, dx: float, dy: float, mode: str = "integer") -> np.ndarray:
    """Aperture transmission after moving the stage by ``(dx, dy)`` HR pixels.

    ``dx`` moves columns, ``dy`` rows; shifts wrap around the mask edges.
    ``mode="fractional"`` interpolates bilinearly and returns values in
    ``[0, 1]``; it is meant for misalignment studies and accepts ``|d| <= 2``.
    """
    base = ap.base_mask if isinstance(ap, CodedAperture) else np.asarray(ap)
    if mode == "integer":
        if dx != int(dx) or dy != int(dy):
            raise ValueError(f"integer mode needs integer shifts, got {(dx, dy)}")
        return np.roll(base, (int(dy), int(dx)), axis=(0, 1)).astype(np.float64)
    if mode != "fractional":
        raise ValueError(f"unknown shift mode {mode!r}")
    if abs(dx) > 2 or abs(dy) > 2:
        raise ValueError("fractional shifts are limited to 2 HR pixels")
    out = base.astype(np.float64)
    for d, axis in ((dy, 0), (dx, 1)):
        lo = math.floor(d)
        frac = d - lo
        a = np.roll(out, lo, axis=axis)
        if frac:
            out = (1.0 - frac) * a + frac * np.roll(out, lo + 1, axis=axis)
        else:
            out = a
    return out


@dataclass(frozen=True)
class SnapshotSchedule:
    shifts: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        shifts = tuple((s[0], s[1]) for s in self.shifts)
        if not shifts:
            raise ValueError("schedule needs at least one snapshot")
        if shifts[0] != (0, 0):
            raise ValueError("first snapshot must be the unshifted aperture")
        if len(set(shifts)) != len(shifts):
            raise ValueError("schedule contains duplicate shifts")
        object.__setattr__(self, "shifts", shifts)

    def __len__(self) -> int:
        return len(self.shifts)

    def __iter__(self) -> Iterator[Tuple[float, float]]:
        return iter(self.shifts)

    @property
    def is_integer(self) -> bool:
        return all(float(a).is_integer() and float(b).is_integer() for a, b in self.shifts)


def raster_schedule(m: int) -> SnapshotSchedule:
    """First ``m`` positions of a row-major ``ceil(sqrt(m))``-wide raster."""
    if m < 1:
        raise ValueError("m must be >= 1")
    n = math.ceil(math.sqrt(m))
    return SnapshotSchedule(tuple((j % n, j // n) for j in range(m)))


def snapshot_masks(ap: CodedAperture, schedule: Sequence, mode: str = "integer") -> np.ndarray:
    """Stack of shifted masks, shape ``(m, N1, N2)``."""
    return np.stack([shift_mask(ap, dx, dy, mode) for dx, dy in schedule])
