"""Gaussian approximations of the SDE transition density.

Every scheme produces a Gaussian ``p(U_{k+1} | U_k) = N(a(U_k), Q(U_k))``:

* ``euler_maruyama``: ``a(U) = U + Lambda(U) dt``, ``Q(U) = beta beta^T dt``
  (singular for nodes with smoothness alpha >= 1).
* ``tme``: Taylor moment expansion of configurable order. Conditional moments
  are expanded with iterated applications of the Ito generator
  ``A phi = (grad phi)^T Lambda + 1/2 tr(beta beta^T hess phi)``; all
  derivatives are exact (forward-mode differentiation of the drift and
  dispersion), never finite differences.
* ``exact_lti``: exact discrete transition for models whose hyperparameters
  are all fixed, via the matrix exponential and the stationary covariance.

Covariances are symmetrized and, when the smallest eigenvalue falls below
``1e-12 * trace``, shifted up to that floor so downstream factorizations
succeed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .model import DgpModel, make_drift_fn, make_dispersion_fn

__all__ = [
    "DiscretizedTransition",
    "euler_maruyama",
    "tme",
    "exact_lti",
]

_COV_FLOOR = 1e-12


def _repair_cov(q):
    """Symmetrize and lift the spectrum to the relative floor."""
    sym = 0.5 * (q + q.T)
    floor = _COV_FLOOR * jnp.clip(jnp.trace(sym), 0.0, None)
    lam_min = jnp.linalg.eigvalsh(sym)[0]
    shift = jnp.maximum(0.0, floor - lam_min)
    return sym + shift * jnp.eye(sym.shape[0])


def _generator(phi, drift, dispersion):
    """Ito generator applied to a (tensor-valued) function of the state."""

    def aphi(u, theta):
        jac = jax.jacfwd(phi)(u, theta)
        hess = jax.jacfwd(jax.jacfwd(phi))(u, theta)
        beta = dispersion(u, theta)
        bbt = beta @ beta.T
        drift_term = jnp.tensordot(jac, drift(u, theta), axes=1)
        diffusion_term = 0.5 * jnp.tensordot(hess, bbt, axes=([-2, -1], [0, 1]))
        return drift_term + diffusion_term

    return aphi


def _build_tme(model: DgpModel, order: int):
    drift = make_drift_fn(model)
    dispersion = make_dispersion_fn(model)

    def mean_fn(u, dt, theta):
        phi = lambda x, th: x
        out = u
        coef = 1.0
        for m in range(1, order + 1):
            phi = _generator(phi, drift, dispersion)
            coef = coef * dt / m
            out = out + coef * phi(u, theta)
        return out

    def second_moment(u, dt, theta):
        phi = lambda x, th: jnp.outer(x, x)
        out = jnp.outer(u, u)
        coef = 1.0
        for m in range(1, order + 1):
            phi = _generator(phi, drift, dispersion)
            coef = coef * dt / m
            out = out + coef * phi(u, theta)
        return out

    def raw_cov_fn(u, dt, theta):
        a = mean_fn(u, dt, theta)
        return second_moment(u, dt, theta) - jnp.outer(a, a)

    return mean_fn, raw_cov_fn


def _build_em(model: DgpModel):
    drift = make_drift_fn(model)
    dispersion = make_dispersion_fn(model)

    def mean_fn(u, dt, theta):
        return u + drift(u, theta) * dt

    def raw_cov_fn(u, dt, theta):
        beta = dispersion(u, theta)
        return beta @ beta.T * dt

    return mean_fn, raw_cov_fn


def _lti_matrices(model: DgpModel, theta):
    """Block-diagonal (A, L) of a fixed-hyperparameter model, from theta."""
    dim = model.state_dim
    A = jnp.zeros((dim, dim))
    L = jnp.zeros((dim, len(model.nodes)))
    idx = 0
    for j, n in enumerate(model.nodes):
        sl = model.slices[n.id]
        alpha = n.smoothness_alpha
        d = alpha + 1
        ell = theta[idx]
        sigma = theta[idx + 1]
        idx += 2
        kappa = jnp.sqrt(2.0 * (alpha + 0.5)) / ell
        for i in range(d - 1):
            A = A.at[sl.start + i, sl.start + i + 1].set(1.0)
        for m in range(d):
            A = A.at[sl.stop - 1, sl.start + m].set(-math.comb(d, m) * kappa ** (d - m))
        scale = (
            sigma
            * math.gamma(alpha + 1.0)
            / math.sqrt(math.gamma(2.0 * alpha + 1.0))
            * (2.0 * kappa) ** (alpha + 0.5)
        )
        L = L.at[sl.stop - 1, j].set(scale)
    return A, L


def _build_exact(model: DgpModel):
    if not model.is_linear():
        raise ValueError(
            "exact discretization needs fixed hyperparameters on every node; "
            f"model {model.name!r} has parent-driven parameters"
        )

    def _pinf(A, L):
        dim = A.shape[0]
        M = jnp.kron(jnp.eye(dim), A) + jnp.kron(A, jnp.eye(dim))
        vec_p = jnp.linalg.solve(M, -(L @ L.T).reshape(-1))
        P = vec_p.reshape(dim, dim)
        return 0.5 * (P + P.T)

    def mean_fn(u, dt, theta):
        A, _ = _lti_matrices(model, theta)
        F = jax.scipy.linalg.expm(A * dt)
        return F @ u

    def raw_cov_fn(u, dt, theta):
        A, L = _lti_matrices(model, theta)
        Pinf = _pinf(A, L)
        F = jax.scipy.linalg.expm(A * dt)
        return Pinf - F @ Pinf @ F.T

    return mean_fn, raw_cov_fn


# One compiled set of kernels per (structure, scheme, order); models sharing a
# structure reuse them through the theta argument.
_KERNEL_CACHE: dict = {}


def _transition_kernels(model: DgpModel, scheme: str, order: int):
    """Jitted (mean, cov, mean_jac, cov_jac) kernels, each (U, dt, theta)."""
    key = (model.structure_key, scheme, order)
    if key in _KERNEL_CACHE:
        return _KERNEL_CACHE[key]
    if scheme == "tme":
        mean_fn, raw_cov_fn = _build_tme(model, order)
    elif scheme == "em":
        mean_fn, raw_cov_fn = _build_em(model)
    elif scheme == "exact":
        mean_fn, raw_cov_fn = _build_exact(model)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    def cov_fn(u, dt, theta):
        return _repair_cov(raw_cov_fn(u, dt, theta))

    kernels = (
        jax.jit(mean_fn),
        jax.jit(cov_fn),
        jax.jit(jax.jacfwd(mean_fn)),
        jax.jit(jax.jacfwd(cov_fn)),
        jax.jit(raw_cov_fn),
    )
    _KERNEL_CACHE[key] = kernels
    return kernels


@dataclass(frozen=True, eq=False)
class DiscretizedTransition:
    """Gaussian transition ``N(a(U), Q(U))`` over a (default) step ``dt``.

    ``mean``/``cov`` evaluate at an explicit step when ``dt`` is passed,
    otherwise at the default. ``mean_jac`` is the state Jacobian of the mean;
    ``cov_jac(U)[i, j, m]`` is the derivative of ``Q_ij`` with respect to
    state component ``m``. All derivatives are exact.
    """

    model: DgpModel
    dt: float
    scheme: str
    order: int = 0
    _kernels: tuple = field(default=None, repr=False)

    @property
    def state_dim(self) -> int:
        return self.model.state_dim

    @property
    def theta(self):
        return jnp.asarray(self.model.theta)

    def _dt(self, dt):
        return self.dt if dt is None else float(dt)

    def mean(self, U, dt=None) -> np.ndarray:
        return np.asarray(self._kernels[0](jnp.asarray(U), self._dt(dt), self.theta))

    def cov(self, U, dt=None) -> np.ndarray:
        return np.asarray(self._kernels[1](jnp.asarray(U), self._dt(dt), self.theta))

    def mean_jac(self, U, dt=None) -> np.ndarray:
        return np.asarray(self._kernels[2](jnp.asarray(U), self._dt(dt), self.theta))

    def cov_jac(self, U, dt=None) -> np.ndarray:
        return np.asarray(self._kernels[3](jnp.asarray(U), self._dt(dt), self.theta))

    def raw_cov(self, U, dt=None) -> np.ndarray:
        """Covariance before symmetrization/flooring (diagnostics only)."""
        return np.asarray(self._kernels[4](jnp.asarray(U), self._dt(dt), self.theta))

    def kernels(self):
        """The pure jitted kernels (mean, cov, mean_jac, cov_jac), each (U, dt, theta)."""
        return self._kernels[:4]


def _make_transition(model: DgpModel, dt: float, scheme: str, order: int = 0):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    kernels = _transition_kernels(model, scheme, order)
    return DiscretizedTransition(model=model, dt=float(dt), scheme=scheme, order=order, _kernels=kernels)


def euler_maruyama(model: DgpModel, dt: float) -> DiscretizedTransition:
    """Euler-Maruyama transition: ``a(U) = U + Lambda(U) dt``, ``Q = beta beta^T dt``.

    ``Q`` is singular whenever a node has smoothness alpha >= 1 (only the last
    state component of each block is driven by noise); this is inherent to the
    scheme and left as is, apart from the common eigenvalue floor.
    """
    return _make_transition(model, dt, "em")


def tme(model: DgpModel, dt: float, order: int) -> DiscretizedTransition:
    """Taylor moment expansion transition of the given order (1 to 3).

    The mean is ``sum_{r<=order} dt^r/r! A^r[id](U)`` and the covariance is
    the equally expanded second moment minus ``a a^T``, symmetrized and
    eigenvalue-floored.
    """
    if order < 1 or order > 3:
        raise ValueError(f"unsupported TME order {order}, expected 1, 2 or 3")
    return _make_transition(model, dt, "tme", order)


def exact_lti(model: DgpModel, dt: float) -> DiscretizedTransition:
    """Exact discrete transition for a fixed-hyperparameter (linear) model.

    ``a(U) = expm(A dt) U`` and ``Q = Pinf - F Pinf F^T``, which equals the
    integrated process noise of the stationary model. Raises ``ValueError``
    for models with parent-driven parameters.
    """
    return _make_transition(model, dt, "exact")
