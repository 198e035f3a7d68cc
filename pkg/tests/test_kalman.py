"""Gaussian filtering and smoothing, checked against closed-form regression."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from ssdgp import (
    GaussianBelief,
    MaternSpec,
    ckf_filter,
    ekf_filter,
    exact_lti,
    gp_regress,
    initial_condition,
    kalman_update,
    nlpd,
    rts_smooth,
    tme,
)
from ssdgp.batch import matern_gram
from ssdgp.kalman import FilterError, step_sizes

from conftest import single_node_model, two_layer_model


def _dataset(n=30, noise=0.01, seed=0, span=2.0):
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.0, span, size=n))
    y = np.sin(3.0 * times) + rng.normal(scale=math.sqrt(noise), size=n)
    return SimpleNamespace(times=times, y=y, R=np.full(n, noise))


# -- step sizes -----------------------------------------------------------------


def test_step_sizes_places_prior_one_gap_early():
    times = np.array([1.0, 1.5, 2.5])
    np.testing.assert_allclose(step_sizes(times), [0.5, 0.5, 1.0])


def test_step_sizes_rejects_unsorted_times():
    with pytest.raises(ValueError, match="strictly increasing"):
        step_sizes(np.array([0.0, 1.0, 1.0]))


# -- single update --------------------------------------------------------------


def test_kalman_update_scalar_case():
    belief = GaussianBelief(mean=np.array([1.0]), cov=np.array([[4.0]]))
    updated = kalman_update(belief, y=3.0, H_row=np.array([1.0]), R=1.0)
    # textbook: K = 4/5, mean = 1 + K*(3-1), var = (1-K)*4
    assert updated.mean[0] == pytest.approx(1.0 + 0.8 * 2.0)
    assert updated.cov[0, 0] == pytest.approx(0.8)


def test_kalman_update_keeps_covariance_psd_with_tiny_noise():
    belief = GaussianBelief(
        mean=np.zeros(2), cov=np.array([[1.0, 0.99], [0.99, 1.0]])
    )
    updated = kalman_update(belief, y=0.5, H_row=np.array([1.0, 0.0]), R=1e-14)
    assert np.linalg.eigvalsh(updated.cov).min() >= -1e-15
    assert updated.mean[0] == pytest.approx(0.5, abs=1e-6)


def test_kalman_update_with_huge_noise_is_noop():
    belief = GaussianBelief(mean=np.array([1.0, 0.2]), cov=np.eye(2))
    updated = kalman_update(belief, y=100.0, H_row=np.array([1.0, 0.0]), R=1e14)
    np.testing.assert_allclose(updated.mean, belief.mean, atol=1e-10)
    np.testing.assert_allclose(updated.cov, belief.cov, rtol=1e-10)


# -- filters on a linear model ------------------------------------------------------


def test_ekf_equals_ckf_on_linear_model():
    model = single_node_model(alpha=1, ell=0.4, sigma=1.0)
    data = _dataset()
    trans = exact_lti(model, 0.01)
    out_e = ekf_filter(model, trans, data)
    out_c = ckf_filter(model, trans, data)
    np.testing.assert_allclose(out_e.means, out_c.means, atol=1e-9)
    np.testing.assert_allclose(out_e.covs, out_c.covs, atol=1e-9)
    np.testing.assert_allclose(out_e.loglik_terms, out_c.loglik_terms, atol=1e-9)


def test_smoothed_posterior_matches_batch_gp():
    """Kalman smoothing of a stationary Matern model is exact GP regression."""
    model = single_node_model(alpha=1, ell=0.4, sigma=1.0)
    data = _dataset(n=25, seed=3)
    out = ekf_filter(model, exact_lti(model, 0.01), data)
    smoothed = rts_smooth(model, exact_lti(model, 0.01), out)

    gram = matern_gram(MaternSpec(1, 0.4, 1.0), data.times)
    mean_b, var_b = gp_regress(gram, data.R, data.y)

    mean_s = np.array([b.mean[0] for b in smoothed])
    var_s = np.array([b.cov[0, 0] for b in smoothed])
    np.testing.assert_allclose(mean_s, mean_b, atol=1e-8)
    np.testing.assert_allclose(var_s, var_b, atol=1e-8)


def test_filter_handles_unobserved_steps():
    model = single_node_model()
    data = _dataset(n=12)
    observed = np.ones(12, dtype=bool)
    observed[4:8] = False
    data_gap = SimpleNamespace(
        times=data.times, y=data.y, R=data.R, observed=observed
    )
    out = ekf_filter(model, exact_lti(model, 0.01), data_gap)
    np.testing.assert_array_equal(out.observed, observed)
    # at a skipped step the filtered belief is the predicted belief
    np.testing.assert_allclose(out.means[5], out.pred_means[5], atol=1e-14)
    np.testing.assert_allclose(out.covs[5], out.pred_covs[5], atol=1e-14)
    # likelihood only counts observed steps
    assert np.all(out.loglik_terms[~observed] == 0.0)


def test_smoother_tightens_interior_variance():
    model = single_node_model(alpha=1, ell=0.4, sigma=1.0)
    data = _dataset(n=20, seed=5)
    trans = exact_lti(model, 0.01)
    out = ekf_filter(model, trans, data)
    smoothed = rts_smooth(model, trans, out)
    f_var_filtered = out.covs[:, 0, 0]
    f_var_smoothed = np.array([b.cov[0, 0] for b in smoothed])
    assert np.all(f_var_smoothed <= f_var_filtered + 1e-12)
    # the last beliefs coincide
    np.testing.assert_allclose(smoothed[-1].mean, out.means[-1], atol=1e-14)


def test_nlpd_matches_direct_gaussian_sum():
    model = single_node_model(alpha=0, ell=0.7, sigma=1.1)
    data = _dataset(n=15, seed=8)
    out = ekf_filter(model, exact_lti(model, 0.01), data)
    direct = 0.0
    for k in range(15):
        v = out.pred_f_var[k] + data.R[k]
        direct += 0.5 * (
            math.log(2.0 * math.pi * v) + (data.y[k] - out.pred_f_mean[k]) ** 2 / v
        )
    assert nlpd(out, data) == pytest.approx(direct, rel=1e-10)


# -- nonlinear model ---------------------------------------------------------------


def test_ckf_runs_on_hierarchical_model():
    model = two_layer_model(sf=1.0, leaf_ell=0.5, leaf_sigma=0.5)
    data = _dataset(n=25, noise=0.05, seed=2, span=1.0)
    out = ckf_filter(model, tme(model, 0.01, 3), data)
    assert len(out) == 25
    assert np.isfinite(out.means).all()
    for k in (0, 12, 24):
        assert np.linalg.eigvalsh(out.covs[k]).min() > -1e-10
    # smoothing stays finite and tightens the f marginal on average
    smoothed = rts_smooth(model, tme(model, 0.01, 3), out)
    var_s = np.array([b.cov[0, 0] for b in smoothed])
    assert np.isfinite(var_s).all()
    assert var_s.mean() <= out.covs[:, 0, 0].mean() + 1e-12


def test_ekf_and_ckf_agree_loosely_on_mild_nonlinearity():
    model = two_layer_model(sf=1.0, leaf_ell=0.8, leaf_sigma=0.3)
    data = _dataset(n=20, noise=0.05, seed=11, span=1.0)
    trans = tme(model, 0.01, 3)
    f_e = ekf_filter(model, trans, data).means[:, 0]
    f_c = ckf_filter(model, trans, data).means[:, 0]
    assert np.max(np.abs(f_e - f_c)) < 0.05


# -- failure modes ------------------------------------------------------------------


def test_filter_raises_on_nonfinite_data():
    model = single_node_model()
    data = _dataset(n=10)
    data.y[3] = np.nan
    with pytest.raises((FilterError, ValueError)):
        ekf_filter(model, exact_lti(model, 0.01), data)


def test_empty_dataset_returns_prior():
    model = single_node_model()
    data = SimpleNamespace(times=np.array([]), y=np.array([]), R=np.array([]))
    out = ekf_filter(model, exact_lti(model, 0.01), data)
    assert len(out) == 0
    smoothed = rts_smooth(model, exact_lti(model, 0.01), out)
    belief = initial_condition(model)
    np.testing.assert_allclose(smoothed[0].mean, belief.mean)
    np.testing.assert_allclose(smoothed[0].cov, belief.cov)
