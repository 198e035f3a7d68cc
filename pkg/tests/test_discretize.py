"""Discrete-time transition schemes checked against the linear-model oracle."""

import math

import numpy as np
import pytest
import scipy.linalg

from ssdgp import (
    MaternSpec,
    euler_maruyama,
    exact_lti,
    matern_sde_coefficients,
    solve_stationary_covariance,
    tme,
)

from conftest import single_node_model, two_layer_model


def _lti_parts(alpha=1, ell=0.5, sigma=1.2):
    model = single_node_model(alpha=alpha, ell=ell, sigma=sigma)
    sde = matern_sde_coefficients(MaternSpec(alpha, ell, sigma))
    return model, sde


# -- Euler-Maruyama -------------------------------------------------------------


def test_euler_maruyama_moments_on_linear_model():
    model, sde = _lti_parts()
    dt = 0.01
    trans = euler_maruyama(model, dt)
    u = np.array([0.4, -0.9])
    np.testing.assert_allclose(trans.mean(u), u + dt * (sde.A @ u), rtol=1e-12)
    # atol absorbs the common eigenvalue floor (1e-12 of the trace)
    np.testing.assert_allclose(
        trans.cov(u), dt * (sde.L @ sde.L.T), rtol=1e-12, atol=1e-11
    )


def test_euler_maruyama_covariance_is_rank_deficient_for_alpha1():
    model, _ = _lti_parts(alpha=1)
    q = euler_maruyama(model, 0.05).cov(np.zeros(2))
    eig = np.linalg.eigvalsh(q)
    assert eig[0] == pytest.approx(0.0, abs=1e-10)
    assert eig[1] > 0.0


# -- TME ------------------------------------------------------------------------


def test_tme_order_validation():
    model, _ = _lti_parts()
    for order in (0, 4):
        with pytest.raises(ValueError, match="TME order"):
            tme(model, 0.01, order)


def test_tme_mean_is_truncated_exponential_on_linear_model():
    """For an LTI model the TME mean is exactly the Taylor series of expm."""
    model, sde = _lti_parts()
    u = np.array([0.7, 0.2])
    dt = 0.02
    for order in (1, 2, 3):
        series = sum(
            np.linalg.matrix_power(sde.A * dt, r) / math.factorial(r)
            for r in range(order + 1)
        )
        np.testing.assert_allclose(
            tme(model, dt, order).mean(u), series @ u, rtol=1e-11, atol=1e-13
        )


@pytest.mark.parametrize("order", [1, 2, 3])
def test_tme_mean_error_scales_with_order(order):
    """One-step mean error against expm(A dt) decays like dt^(order+1)."""
    model, sde = _lti_parts()
    u = np.array([0.7, 0.2])

    def err(dt):
        exact = scipy.linalg.expm(sde.A * dt) @ u
        return np.linalg.norm(tme(model, dt, order).mean(u, dt) - exact)

    e_big, e_small = err(0.1), err(0.05)
    slope = np.log(e_big / e_small) / np.log(2.0)
    assert slope > order + 0.7


def test_tme_covariance_improves_with_order_on_linear_model():
    model, sde = _lti_parts()
    pinf = solve_stationary_covariance(sde)
    dt = 0.1
    F = scipy.linalg.expm(sde.A * dt)
    q_exact = pinf - F @ pinf @ F.T
    u = np.array([0.7, 0.2])
    errors = [
        np.linalg.norm(tme(model, dt, order).cov(u) - q_exact, ord="fro")
        for order in (1, 2, 3)
    ]
    assert errors[0] > errors[1] > errors[2]


def test_tme_covariance_is_symmetric_psd_after_repair():
    model = two_layer_model(sf=2.0, leaf_ell=0.5, leaf_sigma=1.0)
    trans = tme(model, 0.25, 2)
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = rng.normal(size=3)
        q = trans.cov(u)
        np.testing.assert_allclose(q, q.T, atol=1e-12)
        assert np.linalg.eigvalsh(q).min() >= -1e-9 * max(np.trace(q), 1.0)


def test_tme2_repair_engages_near_prior_mean():
    """Order 2 misses the dt^3 noise term of the position row, so the raw
    covariance of a smooth block is indefinite there; the floored version
    must not be."""
    model = two_layer_model(sf=2.0, leaf_ell=0.5, leaf_sigma=1.0)
    trans = tme(model, 0.25, 2)
    u = np.zeros(3)
    raw = trans.raw_cov(u)
    assert np.linalg.eigvalsh(raw).min() < 0.0
    assert np.linalg.eigvalsh(trans.cov(u)).min() >= 0.0


# -- exact LTI transition ----------------------------------------------------------


@pytest.mark.parametrize("alpha", [0, 1, 2])
def test_exact_lti_matches_closed_form(alpha):
    model, sde = _lti_parts(alpha=alpha, ell=0.8, sigma=1.1)
    dt = 0.3
    trans = exact_lti(model, dt)
    F = scipy.linalg.expm(sde.A * dt)
    pinf = solve_stationary_covariance(sde)
    u = np.linspace(-0.5, 0.5, alpha + 1)
    np.testing.assert_allclose(trans.mean(u), F @ u, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(
        trans.cov(u), pinf - F @ pinf @ F.T, rtol=1e-9, atol=1e-12
    )
    # state-independent: the covariance Jacobian vanishes
    np.testing.assert_allclose(trans.cov_jac(u), 0.0, atol=1e-12)


def test_exact_lti_rejects_nonlinear_model():
    with pytest.raises(ValueError):
        exact_lti(two_layer_model(), 0.1)


def test_exact_lti_preserves_stationarity():
    """Pushing Pinf through one exact step returns Pinf."""
    model, sde = _lti_parts(alpha=1)
    dt = 0.17
    trans = exact_lti(model, dt)
    F = scipy.linalg.expm(sde.A * dt)
    pinf = solve_stationary_covariance(sde)
    np.testing.assert_allclose(
        F @ pinf @ F.T + trans.cov(np.zeros(2)), pinf, rtol=1e-9, atol=1e-12
    )


# -- shared plumbing -----------------------------------------------------------------


def test_transition_dt_override():
    model, _ = _lti_parts()
    trans = tme(model, 0.1, 3)
    u = np.array([0.1, 0.1])
    np.testing.assert_allclose(
        trans.mean(u, dt=0.05), tme(model, 0.05, 3).mean(u), rtol=1e-13
    )


def test_transition_rejects_nonpositive_dt():
    model, _ = _lti_parts()
    with pytest.raises(ValueError, match="dt must be positive"):
        tme(model, 0.0, 2)


def test_mean_jacobian_matches_finite_differences():
    model = two_layer_model(leaf_sigma=0.5)
    trans = tme(model, 0.05, 3)
    u = np.array([0.3, -0.2, 0.4])
    jac = trans.mean_jac(u)
    eps = 1e-6
    for m in range(3):
        step = np.zeros(3)
        step[m] = eps
        fd = (trans.mean(u + step) - trans.mean(u - step)) / (2 * eps)
        np.testing.assert_allclose(jac[:, m], fd, rtol=1e-5, atol=1e-8)


def test_cov_jacobian_matches_finite_differences():
    model = two_layer_model(leaf_sigma=0.5)
    trans = tme(model, 0.25, 3)
    u = np.array([0.3, -0.2, 0.4])
    jac = trans.cov_jac(u)
    assert jac.shape == (3, 3, 3)
    eps = 1e-6
    for m in range(3):
        step = np.zeros(3)
        step[m] = eps
        fd = (trans.cov(u + step) - trans.cov(u - step)) / (2 * eps)
        np.testing.assert_allclose(jac[:, :, m], fd, rtol=2e-5, atol=1e-8)
