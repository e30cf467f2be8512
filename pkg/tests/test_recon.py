import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from calibfpa.aperture import raster_schedule
from calibfpa.errors import NumericalError
from calibfpa.recon import (
    NormalInverse,
    _div,
    _grad,
    admm_step,
    get_denoiser,
    identity_denoiser,
    init_state,
    ppfpa,
    prox_l2_ball,
    set_epsilon_from_noise,
    sweep_eps_multiplier,
    tv_denoise,
    tv_norm,
)
from calibfpa.sysmat import DenseSystemMatrix, build_block_diag, least_squares_solve

from conftest import invertible_aperture


# -- ball projection -----------------------------------------------------------


def test_prox_examples():
    y = np.array([0.0, 0.0])
    np.testing.assert_allclose(prox_l2_ball(np.array([3.0, 4.0]), y, 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(prox_l2_ball(np.array([0.3, 0.4]), y, 1.0), [0.3, 0.4])
    np.testing.assert_array_equal(prox_l2_ball(np.array([3.0, 4.0]), np.array([1.0, 1.0]), 0.0), [1.0, 1.0])
    with pytest.raises(ValueError):
        prox_l2_ball(y, y, -1.0)


vec = arrays(np.float64, 6, elements=st.floats(-100, 100))


@given(vec, vec, st.floats(0, 50))
def test_prox_feasible_and_idempotent(s, y, eps):
    p = prox_l2_ball(s, y, eps)
    assert np.linalg.norm(p - y) <= eps * (1 + 1e-12) + 1e-12
    np.testing.assert_allclose(prox_l2_ball(p, y, eps), p, atol=1e-9)


def test_prox_nonexpansive(rng):
    y = rng.standard_normal(10)
    for _ in range(1000):
        a, b = rng.standard_normal((2, 10)) * 3
        eps = rng.uniform(0, 3)
        d = np.linalg.norm(prox_l2_ball(a, y, eps) - prox_l2_ball(b, y, eps))
        assert d <= np.linalg.norm(a - b) + 1e-12


# -- TV --------------------------------------------------------------------------


def test_div_is_negative_adjoint(rng):
    u = rng.standard_normal((7, 9))
    px, py = rng.standard_normal((2, 7, 9))
    gx, gy = _grad(u)
    assert (gx * px + gy * py).sum() == pytest.approx(-(u * _div(px, py)).sum())


def test_tv_norm_examples():
    assert tv_norm(np.ones((5, 5))) == 0
    step = np.zeros((4, 4))
    step[:, 2:] = 1
    assert tv_norm(step) == pytest.approx(4.0)


def test_tv_denoise_lowers_energy(rng):
    v = np.clip(np.kron(rng.random((4, 4)), np.ones((6, 6))) + 0.1 * rng.standard_normal((24, 24)), 0, 1)
    mu = 0.1

    def energy(u):
        return 0.5 * np.sum((u - v) ** 2) + mu * tv_norm(u)

    u = tv_denoise(v, mu)
    assert energy(u) < energy(v)
    # close to a long-run solution
    ref = tv_denoise(v, mu, n_iter=2000)
    assert energy(u) <= energy(ref) * 1.01
    assert tv_norm(u) < tv_norm(v)


def test_tv_denoise_trivial_cases(rng):
    v = rng.random((6, 6))
    np.testing.assert_array_equal(tv_denoise(v, 0.0), v)
    np.testing.assert_allclose(tv_denoise(np.full((6, 6), 0.3), 1.0), 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        tv_denoise(v, -1.0)


def test_get_denoiser():
    assert get_denoiser("identity") is identity_denoiser
    f = lambda v, mu: v  # noqa: E731
    assert get_denoiser(f) is f
    with pytest.raises(ValueError):
        get_denoiser("bm3d")


# -- epsilon -------------------------------------------------------------------


def test_epsilon_examples():
    assert set_epsilon_from_noise(0.0, 100) == 0
    assert set_epsilon_from_noise(0.1, 100) == pytest.approx(1.0)
    assert set_epsilon_from_noise(0.1, 100, 2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        set_epsilon_from_noise(-1, 4)


# -- ADMM against a dense hand-written oracle --------------------------------------


def admm_oracle(C, y, eps, den, mu, iters):
    n = C.shape[1]
    inv = np.linalg.inv(np.eye(n) + C.T @ C)
    z0, z1 = y.copy(), C.T @ y
    d0, d1 = np.zeros_like(y), np.zeros(n)
    for _ in range(iters):
        x = inv @ (C.T @ (z0 + d0) + z1 + d1)
        u = C @ x - d0
        r = np.linalg.norm(u - y)
        z0 = u if r <= eps else y + eps * (u - y) / r
        z1 = den(x - d1, mu)
        d0 = d0 + z0 - C @ x
        d1 = d1 + z1 - x
    return x, z0, z1, d0, d1


TOY_C = np.array([[0.25, 0.25, 0.25, 0.0], [0.0, 0.25, 0.25, 0.25], [0.25, 0.0, 0.25, 0.25]])


@pytest.mark.parametrize("eps", [0.0, 0.05, 10.0])  # exterior, boundary-ish, interior
def test_admm_matches_oracle(eps):
    C = DenseSystemMatrix(TOY_C, (2, 2), (1, 1), 3)
    y = np.array([0.3, 0.5, 0.4])
    shrink = lambda v, mu: v / (1 + mu)  # noqa: E731
    for iters in (1, 2, 5, 20):
        ref = admm_oracle(TOY_C, y, eps, lambda v, mu: shrink(v, mu), 0.2, iters)
        state = init_state(C, y)
        ninv = NormalInverse(C, 1.0)
        for _ in range(iters):
            state = admm_step(state, C, ninv, y, eps, lambda v, mu: shrink(v.ravel(), mu).reshape(v.shape), 0.2)
        for a, b in zip((state.x, state.z0, state.z1, state.d0, state.d1), ref):
            np.testing.assert_allclose(a, b, atol=1e-12)
        res = ppfpa(y, C, denoiser=shrink, eps=eps, mu=0.2, max_iter=iters, tol=1e-300, data_weight=1.0)
        np.testing.assert_allclose(res.state.x, ref[0], atol=1e-12)
        assert res.n_iter == iters


def test_weighted_iteration_is_oracle_on_scaled_problem():
    C = DenseSystemMatrix(TOY_C, (2, 2), (1, 1), 3)
    y = np.array([0.3, 0.5, 0.4])
    w = 4.0
    ref = admm_oracle(w * TOY_C, w * y, w * 0.05, lambda v, mu: v, 0.0, 7)
    res = ppfpa(y, C, denoiser="identity", eps=0.05, max_iter=7, tol=1e-300, data_weight=w)
    np.testing.assert_allclose(res.state.x, ref[0], atol=1e-12)


def test_identity_recovery_and_feasibility(rng):
    ap = invertible_aperture(30, 5)
    B = build_block_diag(raster_schedule(25), ap, 5)
    x = rng.random((30, 30))
    y = B.matvec(x)
    res = ppfpa(y, B, denoiser="identity", eps=0.0, max_iter=1000, tol=1e-11, data_weight=1e4)
    assert res.converged
    assert np.linalg.norm(res.state.x - x.ravel()) <= 1e-6 * np.linalg.norm(x)
    ls = least_squares_solve(B, y, ridge=0.0)
    assert np.linalg.norm(res.state.x - ls.ravel()) <= 1e-6 * np.linalg.norm(x)
    # residual checkpoints are recorded every pass
    assert len(res.residuals) == res.n_iter


def test_output_is_feasible_with_noise(rng):
    ap = invertible_aperture(30, 5)
    B = build_block_diag(raster_schedule(5), ap, 5)
    x = rng.random((30, 30))
    sigma = 1e-3
    y = B.matvec(x) + sigma * rng.standard_normal(B.shape[0])
    eps = set_epsilon_from_noise(sigma, y.size)
    res = ppfpa(y, B, denoiser="tv", eps=eps, mu=0.02, max_iter=300, tol=1e-7)
    w = B.block_size
    # z0 lives in weighted units and sits on or inside the ball
    assert np.linalg.norm(res.state.z0 / w - y) <= eps * (1 + 1e-9)
    assert res.image.min() >= 0 and res.image.max() <= 1


def test_fixed_point_is_stationary(rng):
    C = DenseSystemMatrix(TOY_C, (2, 2), (1, 1), 3)
    y = np.array([0.3, 0.5, 0.4])
    res = ppfpa(y, C, denoiser="identity", eps=0.0, max_iter=5000, tol=1e-13, data_weight=1.0)
    nxt = admm_step(res.state, C, NormalInverse(C, 1.0), y, 0.0, identity_denoiser, 0.0)
    np.testing.assert_allclose(nxt.x, res.state.x, atol=1e-10)
    np.testing.assert_allclose(TOY_C @ res.state.x, y, atol=1e-10)


def test_ppfpa_argument_checks():
    C = DenseSystemMatrix(TOY_C, (2, 2), (1, 1), 3)
    with pytest.raises(ValueError):
        ppfpa(np.zeros(2), C)
    with pytest.raises(ValueError):
        ppfpa(np.zeros(3), C, max_iter=0)
    with pytest.raises(ValueError):
        ppfpa(np.zeros(3), C, ninv=NormalInverse(C, 1.0), data_weight=2.0)


def test_nonfinite_raises():
    C = DenseSystemMatrix(TOY_C, (2, 2), (1, 1), 3)
    bad = lambda v, mu: np.full_like(v, np.nan)  # noqa: E731
    with pytest.raises(NumericalError):
        ppfpa(np.ones(3), C, denoiser=bad, max_iter=5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_zero_measurements_give_zero(seed):
    ap = invertible_aperture(15, 5)
    B = build_block_diag(raster_schedule(3), ap, 5)
    res = ppfpa(np.zeros(B.shape[0]), B, denoiser="tv", max_iter=20)
    np.testing.assert_array_equal(res.image, 0)


def test_warm_start_at_solution_stops_immediately(rng):
    ap = invertible_aperture(15, 5)
    B = build_block_diag(raster_schedule(25), ap, 5)
    x = rng.random((15, 15))
    y = B.matvec(x)
    res = ppfpa(y, B, denoiser="identity", eps=0.0, x0=x, data_weight=1.0, tol=1e-9)
    assert res.converged and res.n_iter <= 2
    assert np.linalg.norm(B.matvec(res.state.x) - y) < 1e-9


def test_residual_checkpoints_non_increasing(rng):
    ap = invertible_aperture(30, 5)
    B = build_block_diag(raster_schedule(5), ap, 5)
    x = rng.random((30, 30))
    y = B.matvec(x) + 1e-3 * rng.standard_normal(B.shape[0])
    res = ppfpa(y, B, denoiser="tv", eps=set_epsilon_from_noise(1e-3, y.size), max_iter=100, tol=1e-300)
    r = res.residuals
    assert r[9] >= r[49] >= r[99]


def test_tv_energy_beats_perturbations(rng):
    v = np.zeros((16, 16))
    v[:, 8:] = 1.0
    v += 0.05 * rng.standard_normal(v.shape)
    mu = 0.2

    def energy(u):
        return 0.5 * np.sum((u - v) ** 2) + mu * tv_norm(u)

    u = tv_denoise(v, mu)
    e = energy(u)
    assert e <= energy(v)
    for _ in range(100):
        assert e <= energy(u + 1e-2 * rng.standard_normal(u.shape))


def test_converged_output_is_feasible(rng):
    ap = invertible_aperture(30, 5)
    B = build_block_diag(raster_schedule(3), ap, 5)
    x = rng.random((30, 30))
    for eps in (0.0, 0.01, 0.1):
        y = B.matvec(x) + 1e-3 * rng.standard_normal(B.shape[0])
        tol = 1e-6
        res = ppfpa(y, B, denoiser="tv", eps=eps, max_iter=2000, tol=tol)
        assert res.converged
        assert np.linalg.norm(B.matvec(res.state.x) - y) <= eps + tol * (1 + np.linalg.norm(y))


def test_eps_sweep(rng):
    ap = invertible_aperture(30, 5)
    B = build_block_diag(raster_schedule(3), ap, 5)
    x = np.clip(np.kron(rng.random((5, 5)), np.ones((6, 6))), 0, 1)
    sigma = 5e-3
    y = B.matvec(x) + sigma * rng.standard_normal(B.shape[0])
    best, scores, res = sweep_eps_multiplier(y, B, sigma, x, max_iter=60)
    assert sorted(scores) == [0.5, 0.75, 1.0, 1.25, 1.5]
    assert scores[best] == max(scores.values())
    direct = ppfpa(y, B, eps=set_epsilon_from_noise(sigma, y.size, best), max_iter=60)
    np.testing.assert_array_equal(direct.image, res.image)
    with pytest.raises(ValueError):
        sweep_eps_multiplier(y, B, sigma, x, grid=())
