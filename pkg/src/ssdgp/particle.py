"""Bootstrap particle filtering and backward-simulation smoothing.

The proposal is the discretized transition itself, so weights only involve
the measurement density. Resampling is systematic and triggered when the
effective sample size drops below half the particle count. All randomness
flows through counter-based JAX keys derived from the integer seed, so runs
are reproducible regardless of host threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp

from .kalman import step_sizes
from .model import DgpModel, initial_condition

__all__ = [
    "ParticleCloud",
    "SmootherDraws",
    "bootstrap_pf",
    "systematic_resample",
    "backward_simulation_smoother",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Filtering output of the bootstrap particle filter.

    ``particles[k]`` and ``log_weights[k]`` describe the filtering
    distribution at ``times[k]`` *after* weighting but *before* any resampling
    at that step, so weighted summaries are exact. ``evidence[k]`` is the
    log of the incremental likelihood estimate (zero at unobserved steps).
    """

    model: DgpModel
    transition: object
    times: np.ndarray
    particles: np.ndarray  # (N, num_particles, state_dim)
    log_weights: np.ndarray  # (N, num_particles), normalized
    evidence: np.ndarray  # (N,)
    resampled: np.ndarray  # (N,) bool
    means: np.ndarray  # (N, state_dim) weighted particle means
    observed: np.ndarray  # (N,) bool
    seed: int

    def __len__(self) -> int:
        return len(self.times)

    @property
    def num_particles(self) -> int:
        return self.particles.shape[1] if self.particles.ndim == 3 else 0

    def f_mean(self) -> np.ndarray:
        """Weighted mean of the observed coordinate at each step."""
        return self.means[:, self.model.observed_index]

    def nlpd(self) -> float:
        """Negative log predictive density accumulated over observed steps."""
        return float(-np.sum(self.evidence[self.observed]))


@dataclass(frozen=True, eq=False)
class SmootherDraws:
    """Joint posterior trajectory draws from backward simulation."""

    model: DgpModel
    times: np.ndarray
    trajectories: np.ndarray  # (num_draws, N, state_dim)

    @property
    def num_draws(self) -> int:
        return self.trajectories.shape[0]

    def f_draws(self) -> np.ndarray:
        return self.trajectories[:, :, self.model.observed_index]

    def mean(self) -> np.ndarray:
        return self.trajectories.mean(axis=0)


def _systematic_indices(weights, u):
    """Indices of a systematic resample at offset ``u`` in [0, 1)."""
    n = weights.shape[0]
    cum = jnp.cumsum(weights)
    positions = (jnp.arange(n) + u) / n
    idx = jnp.searchsorted(cum, positions, side="right")
    return jnp.clip(idx, 0, n - 1)


def systematic_resample(log_weights, seed: int) -> np.ndarray:
    """Resample indices with the systematic (stratified comb) scheme.

    A single uniform offset places an evenly spaced comb over the cumulative
    weights, so a particle with weight w is selected floor(n*w) or
    ceil(n*w) times.
    """
    lw = jnp.asarray(log_weights, dtype=float)
    w = jnp.exp(lw - logsumexp(lw))
    u = jax.random.uniform(jax.random.PRNGKey(seed))
    return np.asarray(_systematic_indices(w, u))


_PF_CACHE: dict = {}


def _vmapped_kernels(transition):
    """Transition kernels vmapped over a particle batch at common dt."""
    kernels = transition.kernels()
    key = ("vm", kernels)
    if key not in _PF_CACHE:
        mean_fn, cov_fn = kernels[0], kernels[1]
        _PF_CACHE[key] = (
            jax.jit(jax.vmap(mean_fn, in_axes=(0, None, None))),
            jax.jit(jax.vmap(cov_fn, in_axes=(0, None, None))),
        )
    return _PF_CACHE[key]


def _pf_runner(kernels, dim: int, h: int):
    key = ("pf", kernels, dim, h)
    if key in _PF_CACHE:
        return _PF_CACHE[key]
    mean_fn, cov_fn = kernels[0], kernels[1]

    @jax.jit
    def run(init_particles, theta, step_keys, dts, ys, Rs, obs):
        num = init_particles.shape[0]
        log_num = jnp.log(float(num))

        def step(carry, inputs):
            particles, logw = carry
            key, dt, y, r, ok = inputs
            k_prop, k_res = jax.random.split(key)

            a = jax.vmap(mean_fn, in_axes=(0, None, None))(particles, dt, theta)
            q = jax.vmap(cov_fn, in_axes=(0, None, None))(particles, dt, theta)
            chol = jnp.linalg.cholesky(q + 1e-300 * jnp.eye(dim))
            noise = jax.random.normal(k_prop, (num, dim))
            prop = a + jnp.einsum("pij,pj->pi", chol, noise)

            # A particle that leaves the finite domain (the explicit transition
            # can blow up at extreme parameter values) gets likelihood zero and
            # a placeholder state, so one stray trajectory cannot poison the
            # cloud; degeneracy below means the *whole* cloud died.
            fin = jnp.all(jnp.isfinite(prop), axis=1)
            prop = jnp.where(fin[:, None], prop, 0.0)
            logw_live = jnp.where(fin, logw, -jnp.inf)

            loglik = -0.5 * (jnp.log(2.0 * jnp.pi * r) + (y - prop[:, h]) ** 2 / r)
            logw_meas = logw_live + jnp.where(fin, loglik, -jnp.inf)
            inc = logsumexp(logw_meas)
            logw_obs = logw_meas - inc

            any_dead = ~jnp.all(fin)
            norm_live = jnp.where(any_dead, logsumexp(logw_live), 0.0)
            logw_pass = logw_live - norm_live

            logw_new = jnp.where(ok, logw_obs, logw_pass)
            bad = jnp.where(ok, ~jnp.isfinite(inc), ~jnp.isfinite(norm_live))
            inc = jnp.where(ok, inc, 0.0)

            w = jnp.exp(logw_new)
            mean_k = w @ prop
            ess = 1.0 / jnp.sum(w**2)
            do_resample = ok & (ess < 0.5 * num)

            u = jax.random.uniform(k_res)
            res_idx = _systematic_indices(w, u)
            idx = jnp.where(do_resample, res_idx, jnp.arange(num))
            particles_out = prop[idx]
            logw_out = jnp.where(do_resample, jnp.full(num, -log_num), logw_new)

            out = (prop, logw_new, inc, do_resample, mean_k, bad)
            return (particles_out, logw_out), out

        init = (init_particles, jnp.full(num, -log_num))
        _, outs = jax.lax.scan(step, init, (step_keys, dts, ys, Rs, obs))
        return outs

    _PF_CACHE[key] = run
    return run


def _cov_sqrt(P):
    """Symmetric PSD square root (tolerates exactly singular blocks)."""
    vals, vecs = np.linalg.eigh(np.asarray(P))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def bootstrap_pf(model: DgpModel, transition, data, num_particles: int, seed: int) -> ParticleCloud:
    """Run a bootstrap particle filter along the measurement grid.

    Particles start from the stationary initial law one step before the first
    measurement time, are propagated through the discretized transition, and
    are reweighted by the Gaussian measurement density at observed steps.

    Raises
    ------
    RuntimeError
        If every weight collapses at some step ("particle degeneracy").
    """
    if num_particles < 2:
        raise ValueError(f"need at least 2 particles, got {num_particles}")
    times = np.asarray(data.times, dtype=float)
    n = len(times)
    dim = model.state_dim
    if n == 0:
        empty = np.zeros((0, num_particles, dim))
        return ParticleCloud(
            model=model, transition=transition, times=times, particles=empty,
            log_weights=np.zeros((0, num_particles)), evidence=np.zeros(0),
            resampled=np.zeros(0, dtype=bool), means=np.zeros((0, dim)),
            observed=np.zeros(0, dtype=bool), seed=seed,
        )
    y = np.broadcast_to(np.asarray(data.y, dtype=float), (n,))
    R = np.broadcast_to(np.asarray(data.R, dtype=float), (n,))
    observed = getattr(data, "observed", None)
    observed = np.ones(n, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)

    key = jax.random.PRNGKey(seed)
    key, init_key = jax.random.split(key)
    step_keys = jax.random.split(key, n)

    belief = initial_condition(model)
    noise = jax.random.normal(init_key, (num_particles, dim))
    init_particles = jnp.asarray(belief.mean) + noise @ jnp.asarray(_cov_sqrt(belief.cov)).T

    run = _pf_runner(transition.kernels(), dim, model.observed_index)
    parts, logw, inc, resampled, means, bad = run(
        init_particles,
        transition.theta,
        step_keys,
        jnp.asarray(step_sizes(times)),
        jnp.asarray(y),
        jnp.asarray(R),
        jnp.asarray(observed),
    )
    bad = np.asarray(bad)
    if bad.any():
        k = int(np.argmax(bad))
        raise RuntimeError(f"particle degeneracy at step {k} (t={times[k]:g})")
    return ParticleCloud(
        model=model,
        transition=transition,
        times=times,
        particles=np.asarray(parts),
        log_weights=np.asarray(logw),
        evidence=np.asarray(inc),
        resampled=np.asarray(resampled),
        means=np.asarray(means),
        observed=observed,
        seed=seed,
    )


def backward_simulation_smoother(pf_out: ParticleCloud, num_draws: int, seed: int) -> SmootherDraws:
    """Draw joint smoothing trajectories by backward simulation.

    Each draw starts from a particle sampled at the final step and walks
    backwards, rescoring step-k particles by their transition density to the
    already-chosen state at step k+1. Categorical draws use the Gumbel-max
    trick so the whole pass stays inside fixed JAX control flow.

    Raises
    ------
    RuntimeError
        If all backward scores vanish at some step ("backward degeneracy").
    """
    if num_draws < 1:
        raise ValueError(f"need at least one draw, got {num_draws}")
    n = len(pf_out)
    if n == 0:
        raise ValueError("cannot smooth an empty particle filter output")
    dim = pf_out.model.state_dim
    mean_vm, cov_vm = _vmapped_kernels(pf_out.transition)
    theta = pf_out.transition.theta

    key = jax.random.PRNGKey(seed)
    key, final_key = jax.random.split(key)

    logw_final = jnp.asarray(pf_out.log_weights[-1])
    gumbel = jax.random.gumbel(final_key, (num_draws, logw_final.shape[0]))
    idx = jnp.argmax(logw_final[None, :] + gumbel, axis=1)
    current = jnp.asarray(pf_out.particles[-1])[idx]  # (num_draws, dim)

    if n == 1:
        traj = np.asarray(current)[:, None, :]
        return SmootherDraws(model=pf_out.model, times=pf_out.times, trajectories=traj)

    dts_between = step_sizes(pf_out.times)[1:]  # gaps k -> k+1, length n-1
    step_keys = jax.random.split(key, n - 1)

    eye = jnp.eye(dim)

    def backward_step(current, inputs):
        parts_k, logw_k, dt, step_key = inputs
        a = mean_vm(parts_k, dt, theta)  # (Np, dim)
        q = cov_vm(parts_k, dt, theta)  # (Np, dim, dim)
        chol = jnp.linalg.cholesky(q + 1e-300 * eye)
        logdet = 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol, axis1=1, axis2=2)), axis=1)
        num = parts_k.shape[0]
        chol_inv = jax.scipy.linalg.solve_triangular(
            chol, jnp.broadcast_to(eye, (num, dim, dim)), lower=True
        )  # (Np, dim, dim)
        dev = current[:, None, :] - a[None, :, :]  # (Ns, Np, dim)
        sol = jnp.einsum("iab,sib->sia", chol_inv, dev)
        maha = jnp.sum(sol**2, axis=-1)
        score = logw_k[None, :] - 0.5 * (maha + logdet[None, :] + dim * _LOG_2PI)
        # NaN/inf scores (transition mean overflow at an extreme ancestor,
        # or a singular step covariance) mean "cannot have come from here".
        score = jnp.where(jnp.isfinite(score), score, -jnp.inf)
        bad = ~jnp.all(jnp.isfinite(logsumexp(score, axis=1)))
        g = jax.random.gumbel(step_key, score.shape)
        pick = jnp.argmax(score + g, axis=1)
        chosen = parts_k[pick]
        return chosen, (chosen, bad)

    inputs = (
        jnp.asarray(pf_out.particles[:-1][::-1]),
        jnp.asarray(pf_out.log_weights[:-1][::-1]),
        jnp.asarray(dts_between[::-1]),
        step_keys,
    )
    _, (states_rev, bad) = jax.lax.scan(backward_step, current, inputs)
    bad = np.asarray(bad)
    if bad.any():
        pos = int(np.argmax(bad))
        k = (n - 2) - pos
        raise RuntimeError(f"backward degeneracy at step {k} (t={pf_out.times[k]:g})")

    states = np.concatenate(
        [np.asarray(states_rev)[::-1], np.asarray(current)[None, :, :]], axis=0
    )  # (n, num_draws, dim)
    return SmootherDraws(
        model=pf_out.model,
        times=pf_out.times,
        trajectories=np.transpose(states, (1, 0, 2)),
    )
