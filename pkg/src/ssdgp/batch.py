"""Batch (Gram-matrix) covariance machinery.

Contains the non-stationary exponential covariance whose lengthscale and
magnitude vary per input point, generic Gram assembly with jitter escalation,
a fast stationary Matern Gram, and closed-form GP regression. The regression
path doubles as the correctness oracle for the state-space smoothers: on a
stationary model both must produce the same posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .matern import MaternSpec
from .model import Wrapping, wrap

__all__ = [
    "NsCovarianceInputs",
    "ns_matern_covariance",
    "ns_gram",
    "ns_gram_partials",
    "matern_gram",
    "build_gram",
    "gp_regress",
]

# Normalization of the non-stationary exponential covariance:
# sqrt(2) / (Gamma(1/2) * 2^(-1/2)) = 2 / sqrt(pi).
_NS_CONST = 2.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class NsCovarianceInputs:
    """Latent inputs of a non-stationary covariance: per-point wrapped values.

    ``u_ell`` and ``u_sigma`` are the unconstrained latent vectors; the
    wrappings map them to positive lengthscales/magnitudes.
    """

    times: np.ndarray
    u_ell: np.ndarray
    u_sigma: np.ndarray
    ell_wrapping: Wrapping = Wrapping("exp")
    sigma_wrapping: Wrapping = Wrapping("exp")

    def __post_init__(self):
        n = len(self.times)
        if len(self.u_ell) != n or len(self.u_sigma) != n:
            raise ValueError(
                f"length mismatch: times {n}, u_ell {len(self.u_ell)}, u_sigma {len(self.u_sigma)}"
            )

    def values(self) -> tuple[np.ndarray, np.ndarray]:
        """Wrapped (lengthscale, magnitude) vectors."""
        ell = np.asarray(wrap(self.ell_wrapping, np.asarray(self.u_ell))[0])
        sigma = np.asarray(wrap(self.sigma_wrapping, np.asarray(self.u_sigma))[0])
        return ell, sigma


def ns_matern_covariance(t, t2, ell_t, ell_t2, sigma_t, sigma_t2):
    """Non-stationary exponential covariance with input-dependent parameters.

        C(t, t2) = sigma(t) sigma(t2) * (2/sqrt(pi))
                   * (ell(t) ell(t2))^(1/4) * (ell(t) + ell(t2))^(-1/2)
                   * exp(-sqrt(2) |t - t2| / sqrt(ell(t) + ell(t2)))

    Symmetric in its argument pairs; with constant parameters it reduces to a
    stationary exponential covariance (effective lengthscale ``sqrt(ell)``) up
    to the fixed normalization. Broadcasts over array inputs.
    """
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    ell_t = np.asarray(ell_t, dtype=float)
    ell_t2 = np.asarray(ell_t2, dtype=float)
    s = ell_t + ell_t2
    tau = np.abs(t - t2)
    return (
        np.asarray(sigma_t, dtype=float)
        * np.asarray(sigma_t2, dtype=float)
        * _NS_CONST
        * (ell_t * ell_t2) ** 0.25
        / np.sqrt(s)
        * np.exp(-math.sqrt(2.0) * tau / np.sqrt(s))
    )


def ns_gram(times, ell, sigma) -> np.ndarray:
    """Gram matrix of the non-stationary covariance at wrapped values."""
    t = np.asarray(times, dtype=float)
    return ns_matern_covariance(
        t[:, None], t[None, :], ell[:, None], ell[None, :], sigma[:, None], sigma[None, :]
    )


def ns_gram_partials(times, ell, sigma):
    """Gram matrix and its one-slot parameter derivatives.

    Returns ``(C, V_ell, V_sigma)`` where ``V_ell[p, q]`` is the derivative of
    ``C[p, q]`` with respect to ``ell(t_p)`` only (the first slot; the
    symmetric second-slot derivative is ``V[q, p]``), and likewise for
    ``V_sigma`` with respect to ``sigma(t_p)``. Since each latent value enters
    a Gram matrix only through row/column ``m``, these two matrices are all a
    gradient assembly needs.
    """
    t = np.asarray(times, dtype=float)
    C = ns_gram(times, ell, sigma)
    s = ell[:, None] + ell[None, :]
    tau = np.abs(t[:, None] - t[None, :])
    V_ell = C * (0.25 / ell[:, None] - 0.5 / s + tau / math.sqrt(2.0) * s**-1.5)
    V_sigma = C / sigma[:, None]
    return C, V_ell, V_sigma


def matern_gram(spec: MaternSpec, times) -> np.ndarray:
    """Stationary Matern Gram matrix (vectorized closed form)."""
    t = np.asarray(times, dtype=float)
    tau = np.abs(t[:, None] - t[None, :])
    alpha = spec.smoothness_alpha
    kappa = spec.kappa
    acc = np.zeros_like(tau)
    for i in range(alpha + 1):
        acc += (
            math.factorial(alpha + i)
            / (math.factorial(i) * math.factorial(alpha - i))
            * (2.0 * kappa * tau) ** (alpha - i)
        )
    return (
        spec.magnitude**2
        * math.factorial(alpha)
        / math.factorial(2 * alpha)
        * np.exp(-kappa * tau)
        * acc
    )


def build_gram(cov_fn, times, jitter: float | None = None) -> np.ndarray:
    """Assemble a Gram matrix from a pairwise covariance function.

    Parameters
    ----------
    cov_fn : callable
        ``cov_fn(t, t2) -> float``, broadcast over arrays.
    times : array
    jitter : float, optional
        Initial diagonal jitter; defaults to ``1e-8 * mean(diag)``. If the
        Cholesky factorization fails the jitter escalates by factors of 10 up
        to ``1e-4 * mean(diag)`` before raising.

    Returns
    -------
    ndarray
        Symmetric positive-definite Gram matrix (jitter included).
    """
    t = np.asarray(times, dtype=float)
    C = np.asarray(cov_fn(t[:, None], t[None, :]), dtype=float)
    C = 0.5 * (C + C.T)
    mean_diag = float(np.mean(np.diag(C))) if len(t) else 0.0
    level = 1e-8 * mean_diag if jitter is None else float(jitter)
    cap = 1e-4 * mean_diag
    while True:
        try:
            np.linalg.cholesky(C + level * np.eye(len(t)))
            return C + level * np.eye(len(t))
        except np.linalg.LinAlgError:
            if level == 0.0:
                level = 1e-8 * mean_diag if mean_diag > 0 else 1e-300
            else:
                level *= 10.0
            if level > cap:
                raise np.linalg.LinAlgError(
                    f"covariance not PD after jitter escalation up to {cap:.3e}"
                )


def gp_regress(gram, R_diag, y, cross_gram=None, prior_var=None):
    """Closed-form GP regression.

    Parameters
    ----------
    gram : (N, N) array
        Prior covariance at the data points.
    R_diag : (N,) array or float
        Measurement noise variances.
    y : (N,) array
    cross_gram : (N, M) array, optional
        Cov(f(data), f(query)); defaults to ``gram`` (predict at the data).
    prior_var : (M,) array, optional
        Prior variance at the query points; defaults to ``diag(gram)``.

    Returns
    -------
    (mean, var)
        Posterior mean and variance at the query points.
    """
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    y = np.asarray(y, dtype=float)
    R = np.broadcast_to(np.asarray(R_diag, dtype=float), (n,))
    if cross_gram is None:
        cross_gram = gram
    if prior_var is None:
        prior_var = np.diag(gram)
    cross_gram = np.asarray(cross_gram, dtype=float)
    prior_var = np.asarray(prior_var, dtype=float)

    chol = cho_factor(gram + np.diag(R), lower=True)
    alpha = cho_solve(chol, y)
    mean = cross_gram.T @ alpha
    solved = cho_solve(chol, cross_gram)
    var = prior_var - np.einsum("ij,ij->j", cross_gram, solved)
    return mean, var
