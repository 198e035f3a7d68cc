"""Matern processes with half-integer smoothness and their LTI SDE form.

A Matern process with smoothness ``nu = alpha + 1/2`` is the first component
of a companion-form linear time-invariant SDE

    dX(t) = A X(t) dt + L dW(t),    f(t) = H X(t),

whose stationary state covariance solves the Lyapunov equation
``A P + P A^T + L L^T = 0``.  This module provides the SDE coefficients, the
Lyapunov solve, the stationary cross-covariance of the state, and the closed
form of the Matern covariance function for half-integer orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "MaternSpec",
    "LtiSde",
    "matern_sde_coefficients",
    "solve_stationary_covariance",
    "stationary_cross_covariance",
    "matern_covariance",
]


@dataclass(frozen=True)
class MaternSpec:
    """Hyperparameters of a Matern process with ``nu = alpha + 1/2``.

    Parameters
    ----------
    smoothness_alpha : int
        Non-negative integer smoothness index. The companion state has
        dimension ``alpha + 1`` (the process and its first ``alpha``
        derivatives).
    lengthscale : float
        Positive lengthscale ``ell`` in time units.
    magnitude : float
        Positive magnitude ``sigma`` in signal units.
    """

    smoothness_alpha: int
    lengthscale: float
    magnitude: float

    def __post_init__(self):
        if int(self.smoothness_alpha) != self.smoothness_alpha or self.smoothness_alpha < 0:
            raise ValueError(
                f"smoothness_alpha must be a non-negative integer, got {self.smoothness_alpha}"
            )
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.magnitude > 0:
            raise ValueError(f"magnitude must be positive, got {self.magnitude}")

    @property
    def nu(self) -> float:
        return self.smoothness_alpha + 0.5

    @property
    def kappa(self) -> float:
        """Inverse-scale parameter ``sqrt(2 nu) / ell``."""
        return math.sqrt(2.0 * self.nu) / self.lengthscale

    @property
    def state_dim(self) -> int:
        return self.smoothness_alpha + 1


@dataclass(frozen=True)
class LtiSde:
    """Coefficients (A, L, H) of a linear time-invariant SDE.

    ``A`` is the d x d drift matrix, ``L`` the d x S dispersion matrix and
    ``H`` the 1 x d observation row.
    """

    A: np.ndarray
    L: np.ndarray
    H: np.ndarray
    state_dim: int


def _dispersion_scale(alpha: int, kappa: float, magnitude: float) -> float:
    """Last (only nonzero) entry of the Matern dispersion vector."""
    return (
        magnitude
        * math.gamma(alpha + 1.0)
        / math.sqrt(math.gamma(2.0 * alpha + 1.0))
        * (2.0 * kappa) ** (alpha + 0.5)
    )


def matern_sde_coefficients(spec: MaternSpec) -> LtiSde:
    """Companion-form SDE coefficients of a Matern process.

    Parameters
    ----------
    spec : MaternSpec

    Returns
    -------
    LtiSde
        ``A`` has ones on the superdiagonal and last row
        ``-binom(d, m) kappa^(d - m)`` for ``m = 0..alpha`` with
        ``d = alpha + 1`` (characteristic polynomial ``(s + kappa)^d``);
        ``L`` has the single nonzero last entry
        ``sigma * alpha! / sqrt((2 alpha)!) * (2 kappa)^(alpha + 1/2)``;
        ``H = [1, 0, ..., 0]``.
    """
    d = spec.state_dim
    kappa = spec.kappa
    A = np.zeros((d, d))
    for i in range(d - 1):
        A[i, i + 1] = 1.0
    for m in range(d):
        A[d - 1, m] = -math.comb(d, m) * kappa ** (d - m)
    L = np.zeros((d, 1))
    L[d - 1, 0] = _dispersion_scale(spec.smoothness_alpha, kappa, spec.magnitude)
    H = np.zeros((1, d))
    H[0, 0] = 1.0
    return LtiSde(A=A, L=L, H=H, state_dim=d)


def solve_stationary_covariance(sde: LtiSde) -> np.ndarray:
    """Stationary state covariance from the Lyapunov equation.

    Solves ``A P + P A^T = -L L^T`` by the direct Kronecker-product linear
    system (the state dimension is tiny), then symmetrizes.

    Raises
    ------
    ValueError
        If ``A`` is not Hurwitz ("no stationary covariance").
    """
    A = np.asarray(sde.A, dtype=float)
    d = A.shape[0]
    eigs = np.linalg.eigvals(A)
    if np.any(eigs.real >= 0.0):
        raise ValueError(
            f"no stationary covariance: drift matrix is not Hurwitz (eigenvalues {eigs})"
        )
    LLt = sde.L @ sde.L.T
    M = np.kron(np.eye(d), A) + np.kron(A, np.eye(d))
    vec_p = np.linalg.solve(M, -LLt.reshape(-1))
    P = vec_p.reshape(d, d)
    return 0.5 * (P + P.T)


def stationary_cross_covariance(
    sde: LtiSde, Pinf: np.ndarray, t: float, t2: float
) -> np.ndarray:
    """Stationary cross-covariance Cov[X(t), X(t2)] of the LTI state.

    Equals ``Pinf @ expm((t2 - t) A)^T`` for ``t < t2`` and
    ``expm((t - t2) A) @ Pinf`` otherwise.
    """
    A = np.asarray(sde.A, dtype=float)
    if t < t2:
        return Pinf @ expm((t2 - t) * A).T
    return expm((t - t2) * A) @ Pinf


def matern_covariance(spec: MaternSpec, t: float, t2: float) -> float:
    """Matern covariance C(t, t2) for half-integer smoothness.

    For ``nu = alpha + 1/2`` the Bessel-function form reduces to an
    exponential times a polynomial:

        C(tau) = sigma^2 exp(-kappa tau) * (alpha! / (2 alpha)!)
                 * sum_{i=0..alpha} (alpha + i)! / (i! (alpha - i)!)
                   * (2 kappa tau)^(alpha - i)

    which is what this function evaluates (no generic Bessel routine is
    involved). At ``t == t2`` the value is ``sigma^2``.
    """
    alpha = spec.smoothness_alpha
    tau = abs(t - t2)
    kappa = spec.kappa
    var = spec.magnitude**2
    if tau == 0.0:
        return var
    acc = 0.0
    for i in range(alpha + 1):
        acc += (
            math.factorial(alpha + i)
            / (math.factorial(i) * math.factorial(alpha - i))
            * (2.0 * kappa * tau) ** (alpha - i)
        )
    return var * math.exp(-kappa * tau) * math.factorial(alpha) / math.factorial(2 * alpha) * acc
