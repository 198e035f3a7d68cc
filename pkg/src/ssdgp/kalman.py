"""Gaussian filtering and smoothing for the discretized model.

Two assumed-density filters are provided: an extended filter that linearizes
the transition mean at the filtered mean (exact Jacobians), and a
spherical-cubature filter propagating ``2 * state_dim`` equally weighted sigma
points. Both share the scalar-measurement Joseph-form update and a
Rauch-Tung-Striebel-type backward smoother driven by the cross-covariances
recorded on the forward pass.

Conventions: the prior sits one step before the first measurement (step size
equal to the first inter-measurement gap, or 1 for a single point), so every
measurement is preceded by a prediction. Step sizes are recomputed per gap,
which supports irregular grids and measurement-free (prediction-only) steps
marked by ``data.observed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

__all__ = [
    "GaussianBelief",
    "FilterOutput",
    "kalman_update",
    "ekf_filter",
    "ckf_filter",
    "rts_smooth",
    "nlpd",
    "FilterError",
]

_PRED_REG = 1e-12


class FilterError(RuntimeError):
    """Numerical failure inside a filtering pass (reports the step index)."""


@dataclass
class GaussianBelief:
    """Gaussian state belief with ``mean`` (dim,) and ``cov`` (dim, dim)."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Per-step filtering results.

    ``pred_*`` hold the one-step-ahead (predicted) beliefs, ``means``/``covs``
    the filtered beliefs, ``cross_covs[k]`` the cross-covariance between the
    states at steps ``k-1`` and ``k`` given data up to ``k-1`` (used for the
    smoother gain), and ``loglik_terms`` the per-step log predictive densities
    of the measurements (zero at prediction-only steps).
    """

    times: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    cross_covs: np.ndarray
    pred_f_mean: np.ndarray
    pred_f_var: np.ndarray
    loglik_terms: np.ndarray
    observed: np.ndarray
    init: GaussianBelief
    method: str

    def __len__(self) -> int:
        return len(self.times)

    def filtered_belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(mean=self.means[k], cov=self.covs[k])

    def predicted_belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(mean=self.pred_means[k], cov=self.pred_covs[k])


def step_sizes(times: np.ndarray) -> np.ndarray:
    """Per-step gaps, with the prior placed one (first-gap-sized) step early."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValueError(f"times must be one-dimensional, got shape {times.shape}")
    if len(times) >= 2:
        gaps = np.diff(times)
        if np.any(gaps <= 0):
            k = int(np.argmax(gaps <= 0))
            raise ValueError(f"times must be strictly increasing (violated at index {k + 1})")
        return np.concatenate([[gaps[0]], gaps])
    return np.ones(max(len(times), 0))


def kalman_update(predicted: GaussianBelief, y: float, H_row, R: float) -> GaussianBelief:
    """Scalar-measurement Kalman update in Joseph-stabilized form.

    Parameters
    ----------
    predicted : GaussianBelief
    y : float
        Measurement value.
    H_row : array
        Observation row (picks the measured linear functional of the state).
    R : float
        Measurement noise variance (may be zero if the predicted measurement
        variance is positive).

    Raises
    ------
    ValueError
        If the innovation variance ``H P H^T + R`` is not positive
        ("degenerate innovation").
    """
    H = np.asarray(H_row, dtype=float).reshape(-1)
    m = np.asarray(predicted.mean, dtype=float)
    P = np.asarray(predicted.cov, dtype=float)
    S = float(H @ P @ H + R)
    if not S > 0:
        raise ValueError(f"degenerate innovation: H P H^T + R = {S} <= 0")
    K = P @ H / S
    mean = m + K * (y - H @ m)
    IKH = np.eye(len(m)) - np.outer(K, H)
    cov = IKH @ P @ IKH.T + R * np.outer(K, K)
    return GaussianBelief(mean=mean, cov=0.5 * (cov + cov.T))


# --- scan-compiled filter bodies, cached per (kernels, method, layout) -------

_FILTER_CACHE: dict = {}


def _filter_runner(kernels, method: str, dim: int, h: int):
    key = (kernels, method, dim, h)
    if key in _FILTER_CACHE:
        return _FILTER_CACHE[key]
    mean_fn, cov_fn, mean_jac, _ = kernels
    eye = jnp.eye(dim)
    e_h = jnp.zeros(dim).at[h].set(1.0)

    def _regularize(P):
        P = 0.5 * (P + P.T)
        return P + _PRED_REG * jnp.trace(P) * eye

    if method == "ekf":

        def predict(m, P, dt, theta):
            J = mean_jac(m, dt, theta)
            mbar = mean_fn(m, dt, theta)
            Pbar = _regularize(J @ P @ J.T + cov_fn(m, dt, theta))
            return mbar, Pbar, P @ J.T

    else:

        def predict(m, P, dt, theta):
            # 2*dim spherical cubature points, equal weights 1/(2*dim)
            chol = jnp.linalg.cholesky(P + _PRED_REG * jnp.trace(P) * eye)
            offsets = math.sqrt(dim) * jnp.concatenate([chol.T, -chol.T], axis=0)
            points = m[None, :] + offsets
            prop = jax.vmap(mean_fn, in_axes=(0, None, None))(points, dt, theta)
            mbar = jnp.mean(prop, axis=0)
            dev = prop - mbar[None, :]
            Pbar = dev.T @ dev / (2 * dim)
            Pbar = Pbar + jnp.mean(
                jax.vmap(cov_fn, in_axes=(0, None, None))(points, dt, theta), axis=0
            )
            cross = offsets.T @ dev / (2 * dim)
            return mbar, _regularize(Pbar), cross

    @jax.jit
    def run(m0, P0, theta, dts, ys, Rs, obs):
        def step(carry, inp):
            m, P = carry
            dt, yk, rk, ok = inp
            mbar, Pbar, cross = predict(m, P, dt, theta)
            fbar = mbar[h]
            fvar = Pbar[h, h]
            S = fvar + rk
            K = Pbar[:, h] / S
            innov = yk - fbar
            IKH = eye - jnp.outer(K, e_h)
            m_upd = mbar + K * innov
            P_upd = IKH @ Pbar @ IKH.T + rk * jnp.outer(K, K)
            ll = -0.5 * (jnp.log(2.0 * jnp.pi * S) + innov * innov / S)
            m_new = jnp.where(ok, m_upd, mbar)
            P_new = jnp.where(ok, P_upd, Pbar)
            outs = (mbar, Pbar, cross, m_new, P_new, fbar, fvar, jnp.where(ok, ll, 0.0), S)
            return (m_new, P_new), outs

        _, outs = jax.lax.scan(step, (m0, P0), (dts, ys, Rs, obs))
        return outs

    _FILTER_CACHE[key] = run
    return run


def _run_filter(model, transition, data, init, method: str) -> FilterOutput:
    times = np.asarray(data.times, dtype=float)
    n = len(times)
    y = np.zeros(n) if n == 0 else np.broadcast_to(np.asarray(data.y, dtype=float), (n,))
    R = np.zeros(n) if n == 0 else np.broadcast_to(np.asarray(data.R, dtype=float), (n,))
    observed = getattr(data, "observed", None)
    observed = np.ones(n, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    if init is None:
        from .model import initial_condition

        init = initial_condition(model)
    dim = model.state_dim
    if n == 0:
        empty = np.zeros((0, dim))
        empty_m = np.zeros((0, dim, dim))
        z = np.zeros(0)
        return FilterOutput(times, empty, empty_m, empty, empty_m, empty_m, z, z, z,
                            np.zeros(0, dtype=bool), init, method)

    dts = step_sizes(times)
    run = _filter_runner(transition.kernels(), method, dim, model.observed_index)
    outs = run(
        jnp.asarray(init.mean),
        jnp.asarray(init.cov),
        transition.theta,
        jnp.asarray(dts),
        jnp.asarray(y),
        jnp.asarray(R),
        jnp.asarray(observed),
    )
    pred_means, pred_covs, cross, means, covs, fbar, fvar, ll, S = map(np.asarray, outs)

    bad = ~np.isfinite(means).all(axis=1) | ~np.isfinite(covs).reshape(n, -1).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        word = "numerical failure" if method == "ckf" else "divergence"
        raise FilterError(f"filter {word} at step {k} (t={times[k]:.6g})")
    s_bad = observed & ~(S > 0)
    if s_bad.any():
        k = int(np.argmax(s_bad))
        raise FilterError(f"degenerate innovation at step {k} (t={times[k]:.6g})")

    return FilterOutput(
        times=times,
        pred_means=pred_means,
        pred_covs=pred_covs,
        means=means,
        covs=covs,
        cross_covs=cross,
        pred_f_mean=fbar,
        pred_f_var=fvar,
        loglik_terms=ll,
        observed=observed,
        init=init,
        method=method,
    )


def ekf_filter(model, transition, data, init: GaussianBelief | None = None) -> FilterOutput:
    """Extended Kalman filter: predictions linearized at the filtered mean.

    Parameters
    ----------
    model : DgpModel
    transition : DiscretizedTransition
    data : object with ``times``, ``y``, ``R`` (and optional ``observed`` mask)
    init : GaussianBelief, optional
        Prior belief; defaults to the model's stationary initial condition.
    """
    return _run_filter(model, transition, data, init, "ekf")


def ckf_filter(model, transition, data, init: GaussianBelief | None = None) -> FilterOutput:
    """Spherical-cubature Kalman filter (2*dim points, equal weights)."""
    return _run_filter(model, transition, data, init, "ckf")


def rts_smooth(model, transition, filter_out: FilterOutput) -> list[GaussianBelief]:
    """Backward smoothing pass using forward-pass gains.

    The gain at step ``k`` is ``G = D_{k+1} P_pred_{k+1}^{-1}`` with ``D`` the
    stored prediction cross-covariance; means and covariances follow the usual
    recursion. The last smoothed belief equals the last filtered belief. With
    no measurements the prior is returned unchanged.
    """
    n = len(filter_out)
    if n == 0:
        return [GaussianBelief(mean=filter_out.init.mean.copy(), cov=filter_out.init.cov.copy())]
    means = filter_out.means
    covs = filter_out.covs
    out = [None] * n
    out[n - 1] = GaussianBelief(mean=means[n - 1].copy(), cov=covs[n - 1].copy())
    for k in range(n - 2, -1, -1):
        pred_cov = filter_out.pred_covs[k + 1]
        gain = np.linalg.solve(pred_cov, filter_out.cross_covs[k + 1].T).T
        mean = means[k] + gain @ (out[k + 1].mean - filter_out.pred_means[k + 1])
        cov = covs[k] + gain @ (out[k + 1].cov - pred_cov) @ gain.T
        out[k] = GaussianBelief(mean=mean, cov=0.5 * (cov + cov.T))
    return out


def nlpd(filter_out: FilterOutput, data) -> float:
    """Negative log predictive density of the measurements.

    Sums ``-log N(y_k | predictive mean_k, predictive var_k + R_k)`` over the
    observed steps, using the one-step-ahead predictive quantities recorded by
    the filter.
    """
    terms = filter_out.loglik_terms[filter_out.observed]
    return float(-np.sum(terms))
