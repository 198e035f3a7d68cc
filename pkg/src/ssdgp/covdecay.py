"""Posterior covariance decay analysis for a linear two-block model.

Tracks how the posterior cross-covariance between an observed process

    df = mu * f dt + u_sigma dW_f,    du_sigma = a * u_sigma dt + b dW_u,

(mu < 0, a < 0, b > 0) and its magnitude process contracts under repeated
Gaussian filter updates. Predictions use the exact moment ODE solutions, the
update multiplies the cross term by the gain factor M_k = R_k/(pred_ff + R_k),
and the product of gains yields a decay bound that the recursion must respect
step by step. A measurement with zero noise collapses the cross term exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CovRecursionConfig",
    "CovRecursionTrace",
    "VarianceFloor",
    "predict_moments",
    "gf_covariance_recursion",
    "covariance_bound",
    "variance_floor",
    "write_trace_csv",
]


@dataclass(frozen=True)
class CovRecursionConfig:
    """Parameters of the covariance-decay recursion.

    ``R`` may be a scalar (same noise at every step) or a length-``steps``
    sequence; a zero entry models a perfect measurement. ``e0_usq`` is the
    initial second moment of the magnitude process and defaults to its
    stationary value b^2 / (2|a|).
    """

    mu: float
    a: float
    b: float
    dt: float
    R: object
    steps: int
    p0_ff: float = 1.0
    p0_fs: float = 0.1
    e0_usq: float | None = None

    def __post_init__(self):
        if not self.mu < 0:
            raise ValueError(f"drift feedback must be negative, got mu={self.mu}")
        if not self.a < 0:
            raise ValueError(f"magnitude feedback must be negative, got a={self.a}")
        if not self.b > 0:
            raise ValueError(f"magnitude diffusion must be positive, got b={self.b}")
        if not self.dt > 0:
            raise ValueError(f"step size must be positive, got dt={self.dt}")
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps}")
        if not self.p0_ff > 0:
            raise ValueError(f"initial variance must be positive, got {self.p0_ff}")
        r = self.r_values()
        if (r < 0).any():
            raise ValueError("measurement noise must be nonnegative")

    def r_values(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.R, dtype=float), (self.steps,)).copy()

    def stationary_usq(self) -> float:
        return self.b**2 / (2.0 * abs(self.a))

    def initial_usq(self) -> float:
        return self.stationary_usq() if self.e0_usq is None else float(self.e0_usq)


def predict_moments(config: CovRecursionConfig, p_fs: float, p_ff: float,
                    e_usq: float, dt: float):
    """Propagate (cross-cov, variance, magnitude second moment) over dt.

    Closed-form solutions of the moment ODEs:

        d/dt P_fs = (mu + a) P_fs
        d/dt E[u^2] = 2 a E[u^2] + b^2
        d/dt P_ff = 2 mu P_ff + E[u^2](t)

    handling the resonant case a == mu separately.
    """
    mu, a, b = config.mu, config.a, config.b
    c = b**2 / (2.0 * a)  # negative of the stationary second moment

    p_fs_new = p_fs * math.exp((mu + a) * dt)
    e_new = (e_usq + c) * math.exp(2.0 * a * dt) - c

    e2mu = math.exp(2.0 * mu * dt)
    if a == mu:
        i1 = dt * e2mu
    else:
        i1 = (math.exp(2.0 * a * dt) - e2mu) / (2.0 * a - 2.0 * mu)
    p_ff_new = e2mu * p_ff + (e_usq + c) * i1 - c * (e2mu - 1.0) / (2.0 * mu)
    return p_fs_new, p_ff_new, e_new


@dataclass(frozen=True)
class CovRecursionTrace:
    """Step-by-step record of the covariance recursion (0-based steps)."""

    config: CovRecursionConfig
    pred_ff: np.ndarray
    pred_fs: np.ndarray
    post_ff: np.ndarray
    post_fs: np.ndarray
    gains: np.ndarray
    bound: np.ndarray
    e_usq: np.ndarray

    def __len__(self) -> int:
        return len(self.gains)


def gf_covariance_recursion(config: CovRecursionConfig) -> CovRecursionTrace:
    """Run the predict/update recursion for the configured number of steps.

    Each step first propagates the moments over one dt, then applies the
    scalar-measurement update with gain factor M_k = R_k / (pred_ff + R_k),
    multiplying both the cross-covariance and the variance by M_k. The decay
    bound |P0_fs| * prod(M_i) is recorded alongside.
    """
    r = config.r_values()
    n = config.steps
    pred_ff = np.empty(n)
    pred_fs = np.empty(n)
    post_ff = np.empty(n)
    post_fs = np.empty(n)
    gains = np.empty(n)
    bound = np.empty(n)
    e_hist = np.empty(n)

    p_fs, p_ff = config.p0_fs, config.p0_ff
    e_usq = config.initial_usq()
    running = abs(config.p0_fs)
    for k in range(n):
        pfs_bar, pff_bar, e_usq = predict_moments(config, p_fs, p_ff, e_usq, config.dt)
        denom = pff_bar + r[k]
        m_k = r[k] / denom if denom > 0 else 0.0
        p_fs = pfs_bar * m_k
        p_ff = pff_bar * m_k
        running *= m_k
        pred_ff[k], pred_fs[k] = pff_bar, pfs_bar
        post_ff[k], post_fs[k] = p_ff, p_fs
        gains[k], bound[k], e_hist[k] = m_k, running, e_usq
    return CovRecursionTrace(
        config=config, pred_ff=pred_ff, pred_fs=pred_fs, post_ff=post_ff,
        post_fs=post_fs, gains=gains, bound=bound, e_usq=e_hist,
    )


def covariance_bound(trace: CovRecursionTrace) -> np.ndarray:
    """Per-step decay bound |P0_fs| * prod_{i<=k} M_i on the cross-covariance."""
    return abs(trace.config.p0_fs) * np.cumprod(trace.gains)


@dataclass(frozen=True)
class VarianceFloor:
    """Lower bound on the predicted variance over one step of length dt.

    ``floor`` is (C_theta - 2 eps sqrt(C)) dt / exp(2 zeta dt sqrt(C)) at the
    optimizing eps, with zeta = 1/(4 eps) the tightest slope satisfying
    sqrt(P) <= eps + zeta P for all P > 0.
    """

    floor: float
    epsilon: float
    zeta: float
    c_theta: float
    c_big: float


def variance_floor(config: CovRecursionConfig, grid_size: int = 2001) -> VarianceFloor:
    """Optimize the one-step variance floor constant over epsilon.

    C_theta is the smallest magnitude second moment along the run and C the
    largest value of (mu * f)^2 in mean square, estimated as mu^2 times the
    largest predicted variance. Feasible epsilon lie in
    (0, C_theta / (2 sqrt(C))); a log-spaced grid picks the maximizer of the
    floor, which vanishes at both endpoints.
    """
    trace = gf_covariance_recursion(config)
    c_theta = float(np.min(trace.e_usq))
    c_big = float(config.mu**2 * np.max(trace.pred_ff))
    if c_theta <= 0 or c_big <= 0:
        raise ValueError("variance floor needs positive moment bounds")
    eps_max = c_theta / (2.0 * math.sqrt(c_big))
    eps_grid = np.geomspace(eps_max * 1e-8, eps_max * (1.0 - 1e-12), grid_size)
    sqrt_c = math.sqrt(c_big)
    zeta = 1.0 / (4.0 * eps_grid)
    # exp(-x) underflows to zero at the tiny-epsilon end instead of overflowing
    floors = (c_theta - 2.0 * eps_grid * sqrt_c) * config.dt * np.exp(
        -2.0 * zeta * config.dt * sqrt_c
    )
    best = int(np.argmax(floors))
    eps = float(eps_grid[best])
    return VarianceFloor(
        floor=float(floors[best]),
        epsilon=eps,
        zeta=1.0 / (4.0 * eps),
        c_theta=c_theta,
        c_big=c_big,
    )


def write_trace_csv(trace: CovRecursionTrace, path) -> None:
    """Write the recursion trace as CSV (one 0-based row per step).

    ``path`` may be a filesystem path or an open text stream.
    """
    lines = ["step,pred_ff,pred_fs,post_ff,post_fs,gain,bound"]
    for k in range(len(trace)):
        row = (
            trace.pred_ff[k], trace.pred_fs[k], trace.post_ff[k],
            trace.post_fs[k], trace.gains[k], trace.bound[k],
        )
        lines.append(str(k) + "," + ",".join(f"{v:.17g}" for v in row))
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
