import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibfpa.aperture import CodedAperture, SnapshotSchedule, generate_aperture, raster_schedule, snapshot_masks
from calibfpa.optics import airy_psf, delta_psf, forward_measure, ideal_measure
from calibfpa.sysmat import (
    BlockDiagSystemMatrix,
    DenseSystemMatrix,
    NormalInverse,
    blur_downsample_matrix,
    build_block_diag,
    build_dense_row_probe,
    dense_from_masks,
    least_squares_solve,
    precompute_normal_inverse,
)

from conftest import invertible_aperture


def probe_columns(masks, psf, sr):
    """Literal basis probing: column j is the stacked snapshots of e_j."""
    m, n1, n2 = masks.shape
    cols = []
    for j in range(n1 * n2):
        e = np.zeros(n1 * n2)
        e[j] = 1.0
        e = e.reshape(n1, n2)
        cols.append(np.concatenate([forward_measure(e, mk, psf, sr).ravel() for mk in masks]))
    return np.stack(cols, axis=1)


def ones_aperture(n1, n2, s1, s2):
    return CodedAperture(np.ones((n1, n2), dtype=np.uint8), (s1, s2), 1.0)


def test_dense_probe_equals_basis_probing():
    ap = generate_aperture(15, 20, 5, 5, 0.8, seed=6)
    sched = raster_schedule(3)
    psf = airy_psf(3.0, 11)
    C = build_dense_row_probe(sched, ap, psf, 5)
    ref = probe_columns(snapshot_masks(ap, sched), psf, 5)
    np.testing.assert_allclose(C.matrix, ref, atol=1e-12)


def test_delta_full_raster_columns():
    C = build_dense_row_probe(raster_schedule(25), ones_aperture(10, 10, 5, 5), delta_psf(), 5)
    nz = (C.matrix != 0).sum(axis=0)
    np.testing.assert_array_equal(nz, 25)
    np.testing.assert_array_equal(C.matrix[C.matrix != 0], 1 / 25)


def test_single_block_2x2():
    mask = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    C = build_dense_row_probe(raster_schedule(1), CodedAperture(mask, (2, 2), 0.75), delta_psf(), 2)
    np.testing.assert_array_equal(C.matrix, [[0.25, 0.0, 0.25, 0.25]])


def test_dense_cap():
    with pytest.raises(ValueError):
        build_dense_row_probe(raster_schedule(1), ones_aperture(65, 65, 5, 5), delta_psf(), 5)
    C = build_dense_row_probe(raster_schedule(1), ones_aperture(65, 65, 5, 5), delta_psf(), 5, cap=65 * 65)
    assert C.shape == (169, 65 * 65)


def test_dense_matvec_equals_forward(rng):
    ap = generate_aperture(20, 20, 5, 5, 0.8, seed=1)
    sched = raster_schedule(4)
    psf = airy_psf(4.0)
    C = build_dense_row_probe(sched, ap, psf, 5)
    masks = snapshot_masks(ap, sched)
    for _ in range(5):
        x = rng.random((20, 20))
        y = np.concatenate([forward_measure(x, mk, psf, 5).ravel() for mk in masks])
        assert np.linalg.norm(C.matvec(x) - y) <= 1e-10 * np.linalg.norm(y)
        np.testing.assert_allclose(C.block(2), C.matrix[32:48])


def test_blur_downsample_matrix_rectangular_blocks(rng):
    psf = airy_psf(2.0, 7)
    A = blur_downsample_matrix((12, 10), psf, (3, 2))
    x = rng.random((12, 10))
    np.testing.assert_allclose(A @ x.ravel(), forward_measure(x, np.ones_like(x), psf, (3, 2)).ravel(), atol=1e-14)


# -- block-diagonal ----------------------------------------------------------


def test_block_diag_equals_dense_delta(rng):
    for n1, n2, m in [(10, 10, 1), (15, 20, 5), (20, 20, 25)]:
        ap = generate_aperture(n1, n2, 5, 5, 0.8, seed=m)
        sched = raster_schedule(m)
        B = build_block_diag(sched, ap, 5)
        D = build_dense_row_probe(sched, ap, delta_psf(), 5)
        np.testing.assert_allclose(B.to_dense(), D.matrix, atol=1e-15)
        x = rng.random((n1, n2))
        np.testing.assert_allclose(B.matvec(x), D.matvec(x), rtol=1e-10, atol=1e-15)


def test_block_diag_matvec_equals_ideal(rng):
    ap = generate_aperture(30, 30, 5, 5, 0.8, seed=2)
    sched = raster_schedule(5)
    B = build_block_diag(sched, ap, 5)
    x = rng.random((30, 30))
    y = np.concatenate([ideal_measure(x, mk, 5).ravel() for mk in snapshot_masks(ap, sched)])
    np.testing.assert_allclose(B.matvec(x), y, rtol=1e-13)
    assert B.blocks.shape == (36, 5, 25)


def test_block_diag_ones_mask():
    B = build_block_diag(raster_schedule(1), ones_aperture(10, 15, 5, 5), 5)
    np.testing.assert_array_equal(B.blocks, 1 / 25)


def test_block_diag_rejects_fractional():
    ap = generate_aperture(10, 10, 5, 5, 0.8)
    with pytest.raises(ValueError):
        build_block_diag(SnapshotSchedule(((0, 0), (0.5, 0))), ap, 5)


def test_block_diag_matvec_fast():
    ap = generate_aperture(360, 360, 5, 5, 0.8, seed=0)
    B = build_block_diag(raster_schedule(5), ap, 5)
    x = np.random.default_rng(0).random((360, 360))
    B.matvec(x)
    best = min(_timed(B.matvec, x) for _ in range(5))
    assert best < 0.05


def _timed(fn, *a):
    t = time.perf_counter()
    fn(*a)
    return time.perf_counter() - t


@pytest.mark.parametrize("form", ["dense", "block"])
def test_adjoint_consistency(rng, form):
    ap = generate_aperture(15, 15, 5, 5, 0.8, seed=4)
    sched = raster_schedule(4)
    C = build_block_diag(sched, ap, 5) if form == "block" else build_dense_row_probe(sched, ap, airy_psf(2.0), 5)
    for _ in range(5):
        x = rng.standard_normal(225)
        y = rng.standard_normal(C.shape[0])
        lhs, rhs = C.matvec(x) @ y, x @ C.rmatvec(y)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300) + 1e-14


# -- normal inverse ----------------------------------------------------------


def test_zero_matrix_normal_inverse_is_identity(rng):
    B = BlockDiagSystemMatrix(np.zeros((4, 3, 4)), np.arange(16).reshape(4, 4), (4, 4), (2, 2))
    v = rng.standard_normal(16)
    np.testing.assert_allclose(NormalInverse(B).apply(v), v, atol=0)
    D = DenseSystemMatrix(np.zeros((12, 16)), (4, 4), (2, 2), 3)
    np.testing.assert_allclose(NormalInverse(D).apply(v), v, atol=1e-15)


@given(st.integers(0, 2**31), st.sampled_from([1.0, 3.0, 25.0]))
@settings(max_examples=20, deadline=None)
def test_normal_inverse_residual(seed, w):
    g = np.random.default_rng(seed)
    blocks = g.standard_normal((6, 3, 4))
    B = BlockDiagSystemMatrix(blocks, g.permutation(24).reshape(6, 4), (4, 6), (2, 3))
    ninv = precompute_normal_inverse(B, w)
    v = g.standard_normal(24)
    x = ninv.apply(v)
    back = x + w * w * B.rmatvec(B.matvec(x))
    assert np.linalg.norm(back - v) <= 1e-10 * np.linalg.norm(v)
    assert ninv.weight == w


def test_block_and_dense_normal_inverse_agree(rng):
    ap = generate_aperture(15, 15, 5, 5, 0.8, seed=8)
    sched = raster_schedule(5)
    B = build_block_diag(sched, ap, 5)
    D = build_dense_row_probe(sched, ap, delta_psf(), 5)
    v = rng.standard_normal(225)
    for w in (1.0, 25.0):
        np.testing.assert_allclose(NormalInverse(B, w).apply(v), NormalInverse(D, w).apply(v), rtol=1e-9, atol=1e-12)


def test_normal_psd(rng):
    ap = generate_aperture(15, 15, 5, 5, 0.8, seed=8)
    B = build_block_diag(raster_schedule(5), ap, 5)
    for _ in range(20):
        v = rng.standard_normal(225)
        q = v @ v + np.sum(B.matvec(v) ** 2)
        assert q >= (v @ v) * (1 - 1e-9)


# -- least squares -------------------------------------------------------------


def test_least_squares_exact_recovery(rng):
    ap = invertible_aperture(30, 5)
    sched = raster_schedule(25)
    B = build_block_diag(sched, ap, 5)
    x = rng.random((30, 30))
    y = B.matvec(x)
    np.testing.assert_allclose(least_squares_solve(B, y, ridge=0.0), x, atol=1e-8)
    D = DenseSystemMatrix(B.to_dense(), (30, 30), (6, 6), 25)
    np.testing.assert_allclose(least_squares_solve(D, y, ridge=0.0), x, atol=1e-8)


def test_least_squares_zero_and_dead_pixels(rng):
    ap = generate_aperture(10, 10, 5, 5, 0.8, seed=0)
    B = build_block_diag(raster_schedule(2), ap, 5)
    np.testing.assert_array_equal(least_squares_solve(B, np.zeros(B.shape[0])), 0)
    # with one snapshot, closed pixels have all-zero columns
    B1 = build_block_diag(raster_schedule(1), ap, 5)
    x = least_squares_solve(B1, B1.matvec(rng.random(100)), ridge=1e-6)
    np.testing.assert_array_equal(x[ap.base_mask == 0], 0)


def test_least_squares_dimension_check():
    B = build_block_diag(raster_schedule(2), generate_aperture(10, 10, 5, 5, 0.8), 5)
    with pytest.raises(ValueError):
        least_squares_solve(B, np.zeros(3))
    with pytest.raises(ValueError):
        least_squares_solve(B, np.zeros(B.shape[0]), ridge=-1)


def test_dense_from_masks_matches_probe():
    ap = generate_aperture(10, 10, 5, 5, 0.8, seed=0)
    sched = raster_schedule(3)
    psf = airy_psf(2.0)
    a = dense_from_masks(snapshot_masks(ap, sched), psf, 5)
    b = build_dense_row_probe(sched, ap, psf, 5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
