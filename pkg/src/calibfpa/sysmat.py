"""System matrices relating an HR scene to its stacked LR snapshots.

Measurements are stacked snapshot-major: ``y[i*M + k]`` is LR pixel ``k``
(row-major) of snapshot ``i``. Scenes are flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import linalg, signal

from calibfpa.aperture import CodedAperture, SnapshotSchedule, snapshot_masks
from calibfpa.optics import Psf, SrLike, as_sr, lr_shape

DEFAULT_DENSE_CAP = 3600
DEFAULT_RIDGE = 1e-6


@dataclass
class DenseSystemMatrix:
    matrix: np.ndarray  # (m*M, N)
    hr_shape: Tuple[int, int]
    lr_shape: Tuple[int, int]
    m: int

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, i: int) -> np.ndarray:
        """Rows of snapshot ``i``."""
        M = self.lr_shape[0] * self.lr_shape[1]
        return self.matrix[i * M : (i + 1) * M]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.ravel(x)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ np.ravel(y)

    def scaled(self, w: float) -> "DenseSystemMatrix":
        return DenseSystemMatrix(self.matrix * w, self.hr_shape, self.lr_shape, self.m)

    @property
    def block_size(self) -> int:
        return (self.hr_shape[0] * self.hr_shape[1]) // (self.lr_shape[0] * self.lr_shape[1])


@dataclass
class BlockDiagSystemMatrix:
    """Blur-free system matrix stored as ``M`` independent ``m x s`` blocks.

    ``blocks[k, i, l]`` weights HR pixel ``hr_index[k, l]`` in snapshot ``i``
    of LR pixel ``k``.
    """

    blocks: np.ndarray  # (M, m, s)
    hr_index: np.ndarray  # (M, s)
    hr_shape: Tuple[int, int]
    lr_shape: Tuple[int, int]

    @property
    def m(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self):
        M, m, s = self.blocks.shape
        return (m * M, M * s)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xb = np.ravel(x)[self.hr_index]
        return np.einsum("kil,kl->ik", self.blocks, xb).ravel()

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        M = self.blocks.shape[0]
        yb = np.reshape(y, (self.m, M))
        xb = np.einsum("kil,ik->kl", self.blocks, yb)
        out = np.empty(self.shape[1])
        out[self.hr_index] = xb
        return out

    def scaled(self, w: float) -> "BlockDiagSystemMatrix":
        return BlockDiagSystemMatrix(self.blocks * w, self.hr_index, self.hr_shape, self.lr_shape)

    @property
    def block_size(self) -> int:
        return self.blocks.shape[2]

    def min_singular_values(self) -> np.ndarray:
        """Smallest singular value of every ``m x s`` block."""
        return np.linalg.svd(self.blocks, compute_uv=False)[:, -1]

    def to_dense(self) -> np.ndarray:
        M, m, s = self.blocks.shape
        dense = np.zeros((m * M, M * s))
        for i in range(m):
            rows = i * M + np.arange(M)
            dense[rows[:, None], self.hr_index] = self.blocks[:, i, :]
        return dense

    @classmethod
    def from_masks(cls, masks: np.ndarray, sr: SrLike) -> "BlockDiagSystemMatrix":
        masks = np.asarray(masks, dtype=np.float64)
        m, n1, n2 = masks.shape
        s1, s2 = as_sr(sr)
        m1, m2 = lr_shape((n1, n2), (s1, s2))
        s = s1 * s2
        blocks = (
            masks.reshape(m, m1, s1, m2, s2).transpose(1, 3, 0, 2, 4).reshape(m1 * m2, m, s) / s
        )
        idx = np.arange(n1 * n2).reshape(m1, s1, m2, s2).transpose(0, 2, 1, 3).reshape(m1 * m2, s)
        return cls(np.ascontiguousarray(blocks), idx, (n1, n2), (m1, m2))


def blur_downsample_matrix(hr_shape, psf: Psf, sr: SrLike) -> np.ndarray:
    """``M x N`` matrix of ``x -> D(psf * x)`` with zero padding.

    Entry ``(k, j)`` is the mean of the PSF, centered on HR pixel ``j``, over
    the HR block of LR pixel ``k``; computed from the box-summed kernel.
    """
    k = psf.kernel if isinstance(psf, Psf) else np.asarray(psf, dtype=np.float64)
    s1, s2 = as_sr(sr)
    n1, n2 = hr_shape
    m1, m2 = lr_shape(hr_shape, (s1, s2))
    c = k.shape[0] // 2
    boxed = signal.convolve2d(k, np.ones((s1, s2)), mode="full") / (s1 * s2)

    def index(n, m, s, size):
        rows = np.arange(m)[:, None] * s + s - 1 + c - np.arange(n)[None, :]
        valid = (rows >= 0) & (rows < size)
        return np.clip(rows, 0, size - 1), valid

    i1, v1 = index(n1, m1, s1, boxed.shape[0])
    i2, v2 = index(n2, m2, s2, boxed.shape[1])
    A = boxed[i1[:, None, :, None], i2[None, :, None, :]]
    A *= v1[:, None, :, None] & v2[None, :, None, :]
    return A.reshape(m1 * m2, n1 * n2)


def dense_from_masks(masks: np.ndarray, psf: Psf, sr: SrLike, cap: int = DEFAULT_DENSE_CAP) -> DenseSystemMatrix:
    masks = np.asarray(masks, dtype=np.float64)
    m, n1, n2 = masks.shape
    if n1 * n2 > cap:
        raise ValueError(f"dense system matrix limited to N <= {cap}, got N = {n1 * n2}")
    A = blur_downsample_matrix((n1, n2), psf, sr)
    C = np.concatenate([A * mk.ravel()[None, :] for mk in masks], axis=0)
    return DenseSystemMatrix(C, (n1, n2), lr_shape((n1, n2), sr), m)


def build_dense_row_probe(
    schedule: SnapshotSchedule,
    aperture: CodedAperture,
    psf: Psf,
    sr: SrLike,
    cap: int = DEFAULT_DENSE_CAP,
    mode: str = "integer",
) -> DenseSystemMatrix:
    """Dense blurred system matrix for every snapshot of ``schedule``.

    Column ``j`` equals the stacked noiseless snapshots of the basis image
    ``e_j``. Since the mask is diagonal, that column is the blur/downsample
    response of ``e_j`` scaled by each snapshot's mask value at ``j``.
    """
    return dense_from_masks(snapshot_masks(aperture, schedule, mode), psf, sr, cap)


def build_block_diag(schedule: SnapshotSchedule, aperture: CodedAperture, sr: SrLike) -> BlockDiagSystemMatrix:
    """Blur-free system matrix in block-diagonal form."""
    if not schedule.is_integer:
        raise ValueError("block-diagonal form requires integer shifts")
    return BlockDiagSystemMatrix.from_masks(snapshot_masks(aperture, schedule), sr)


class NormalInverse:
    """Applies ``(I + w^2 C^T C)^{-1}`` for a data weight ``w`` (default 1).

    Block-diagonal ``C`` keeps one ``s x s`` inverse per LR pixel (via
    Cholesky); dense ``C`` keeps a single Cholesky factor.
    """

    def __init__(self, C, weight: float = 1.0):
        self.weight = float(weight)
        if weight != 1.0:
            C = C.scaled(weight)
        self.C = C
        if isinstance(C, BlockDiagSystemMatrix):
            B = C.blocks
            G = np.einsum("kil,kij->klj", B, B)
            G += np.eye(B.shape[2])
            try:
                L = np.linalg.cholesky(G)
            except np.linalg.LinAlgError as exc:  # I + C^T C is >= I
                raise RuntimeError("Cholesky failed on I + C_k^T C_k") from exc
            Linv = np.linalg.inv(L)
            self.inverse = np.einsum("kji,kjl->kil", Linv, Linv)
            self.factor = None
        else:
            mat = C.matrix if isinstance(C, DenseSystemMatrix) else np.asarray(C)
            G = mat.T @ mat + np.eye(mat.shape[1])
            self.factor = linalg.cho_factor(G, lower=True)
            self.inverse = None

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.ravel(v)
        if self.factor is not None:
            return linalg.cho_solve(self.factor, v)
        C = self.C
        out = np.empty_like(v)
        out[C.hr_index] = np.einsum("kab,kb->ka", self.inverse, v[C.hr_index])
        return out


def precompute_normal_inverse(C, weight: float = 1.0) -> NormalInverse:
    return NormalInverse(C, weight)


def least_squares_solve(C, y: np.ndarray, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Ridge-regularized least squares ``argmin ||Cx - y||^2 + ridge ||x||^2``.

    Block-diagonal ``C`` is solved one LR pixel at a time. ``ridge=0`` needs
    every block to have full column rank.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    y = np.ravel(np.asarray(y, dtype=np.float64))
    if y.size != C.shape[0]:
        raise ValueError(f"measurement length {y.size} does not match system rows {C.shape[0]}")
    n1, n2 = C.hr_shape
    if isinstance(C, BlockDiagSystemMatrix):
        B = C.blocks
        M, m, s = B.shape
        G = np.einsum("kil,kij->klj", B, B) + ridge * np.eye(s)
        rhs = np.einsum("kil,ik->kl", B, y.reshape(m, M))
        xb = np.linalg.solve(G, rhs[..., None])[..., 0]
        x = np.empty(M * s)
        x[C.hr_index] = xb
        return x.reshape(n1, n2)
    mat = C.matrix
    if ridge == 0:
        x = np.linalg.lstsq(mat, y, rcond=None)[0]
    else:
        x = np.linalg.solve(mat.T @ mat + ridge * np.eye(mat.shape[1]), mat.T @ y)
    return x.reshape(n1, n2)
