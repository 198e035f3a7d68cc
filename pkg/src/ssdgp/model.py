"""Hierarchical Matern models as one joint non-linear SDE.

A model is a tree of Matern nodes. The root node ``(1, 1)`` is the observed
process ``f``; every other node drives the lengthscale or the magnitude of its
(unique) child through a positive wrapping function ``g``. Stacking all node
states gives a joint state ``U`` obeying

    dU(t) = Lambda(U) dt + beta(U) dW(t),

where both coefficients are block-wise companion-form Matern coefficients with
``kappa`` and the dispersion scale recomputed from the wrapped parent values at
the current state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Union

import jax
import jax.numpy as jnp
import numpy as np

from .matern import MaternSpec, matern_sde_coefficients, solve_stationary_covariance

__all__ = [
    "NodeId",
    "Wrapping",
    "ParentLink",
    "FixedValue",
    "DgpNode",
    "DgpModel",
    "wrap",
    "build_dgp",
    "joint_drift",
    "joint_dispersion",
    "initial_condition",
    "sample_prior",
    "PriorSamples",
    "model_from_dict",
    "model_to_dict",
    "model_from_json",
]

# Inputs to the exponential wrapping are clamped to this range so optimizer
# line searches cannot overflow float64.
_EXP_CLAMP = 40.0

_WRAP_KINDS = ("exp", "square_plus_c", "inverse_square_plus_c")


class NodeId(NamedTuple):
    layer: int
    position: int


@dataclass(frozen=True)
class Wrapping:
    """Positive map g: R -> (0, inf) applied to parent process values.

    ``kind`` is one of ``"exp"`` (g(u) = e^u, input clamped), ``"square_plus_c"``
    (g(u) = u^2 + c) or ``"inverse_square_plus_c"`` (g(u) = 1/(u^2 + c)).
    """

    kind: str
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in _WRAP_KINDS:
            raise ValueError(f"unknown wrapping kind {self.kind!r}, expected one of {_WRAP_KINDS}")
        if self.kind != "exp" and not self.c > 0:
            raise ValueError(f"wrapping {self.kind!r} needs c > 0, got {self.c}")


@dataclass(frozen=True)
class ParentLink:
    parent: NodeId
    wrapping: Wrapping


@dataclass(frozen=True)
class FixedValue:
    value: float


ParamSource = Union[ParentLink, FixedValue]


@dataclass(frozen=True)
class DgpNode:
    """One Matern node of the hierarchy.

    ``lengthscale_source`` / ``magnitude_source`` are either links to a parent
    node one layer deeper (whose process value is passed through the link's
    wrapping) or fixed positive constants.
    """

    id: NodeId
    smoothness_alpha: int
    lengthscale_source: ParamSource
    magnitude_source: ParamSource

    @property
    def state_dim(self) -> int:
        return self.smoothness_alpha + 1


def _wrap_value(wrapping: Wrapping, u):
    if wrapping.kind == "exp":
        return jnp.exp(jnp.clip(u, -_EXP_CLAMP, _EXP_CLAMP))
    if wrapping.kind == "square_plus_c":
        return u * u + wrapping.c
    return 1.0 / (u * u + wrapping.c)


def wrap(wrapping: Wrapping, u):
    """Evaluate a wrapping function with its first and second derivatives.

    Parameters
    ----------
    wrapping : Wrapping
    u : float or array

    Returns
    -------
    (g, dg, d2g)
        Value and first/second derivatives, elementwise. The exponential kind
        clamps its input to ``[-40, 40]``; outside that range the derivatives
        are zero (the clamped function is constant there).
    """
    u = jnp.asarray(u, dtype=jnp.float64)
    if wrapping.kind == "exp":
        inside = (u > -_EXP_CLAMP) & (u < _EXP_CLAMP)
        g = jnp.exp(jnp.clip(u, -_EXP_CLAMP, _EXP_CLAMP))
        dg = jnp.where(inside, g, 0.0)
        return g, dg, dg
    if wrapping.kind == "square_plus_c":
        g = u * u + wrapping.c
        return g, 2.0 * u, jnp.full_like(u, 2.0)
    den = u * u + wrapping.c
    g = 1.0 / den
    dg = -2.0 * u / den**2
    d2g = (6.0 * u * u - 2.0 * wrapping.c) / den**3
    return g, dg, d2g


@dataclass(frozen=True, eq=False)
class DgpModel:
    """Validated hierarchy with a fixed joint-state layout.

    Nodes are laid out in (layer, position) order as contiguous state blocks
    of dimension ``alpha + 1`` each. ``H`` selects the first component of the
    root block, i.e. ``H @ U = f``. Fixed hyperparameter values are collected
    in the vector ``theta`` (in layout order: for each node, the fixed
    lengthscale then the fixed magnitude, when present) so that transition
    builders can treat models of equal structure as one compiled program.
    """

    nodes: tuple
    state_dim: int
    slices: dict
    H: np.ndarray
    theta: np.ndarray
    structure_key: tuple
    name: str = "model"

    @property
    def observed_index(self) -> int:
        return self.slices[NodeId(1, 1)].start

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def node(self, layer: int, position: int) -> DgpNode:
        for n in self.nodes:
            if n.id == NodeId(layer, position):
                return n
        raise KeyError(f"no node ({layer}, {position})")

    def is_linear(self) -> bool:
        """True when every node has fixed hyperparameters (pure LTI model)."""
        return all(
            isinstance(n.lengthscale_source, FixedValue)
            and isinstance(n.magnitude_source, FixedValue)
            for n in self.nodes
        )


def _source_descriptor(src: ParamSource) -> tuple:
    if isinstance(src, FixedValue):
        return ("fixed",)
    return ("parent", tuple(src.parent), src.wrapping.kind, src.wrapping.c)


def build_dgp(nodes, name: str = "model") -> DgpModel:
    """Validate a collection of nodes and lay out the joint state.

    Parameters
    ----------
    nodes : iterable of DgpNode
        Must form a tree rooted at node ``(1, 1)``: every parent link points
        one layer deeper, every non-root node is the parent of exactly one
        link, and ids are unique.

    Returns
    -------
    DgpModel

    Raises
    ------
    ValueError
        On duplicate ids ("duplicate node") or malformed trees
        ("invalid hierarchy").
    """
    nodes = sorted(nodes, key=lambda n: (n.id.layer, n.id.position))
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise ValueError(f"duplicate node {tuple(dup)}")
    id_set = set(ids)
    if NodeId(1, 1) not in id_set:
        raise ValueError("invalid hierarchy: missing root node (1, 1)")
    if sum(1 for i in ids if i.layer == 1) != 1:
        raise ValueError("invalid hierarchy: layer 1 must contain exactly the root node")

    reference_counts = {i: 0 for i in ids}
    for n in nodes:
        for role, src in (("lengthscale", n.lengthscale_source), ("magnitude", n.magnitude_source)):
            if isinstance(src, ParentLink):
                pid = NodeId(*src.parent)
                if pid not in id_set:
                    raise ValueError(f"invalid hierarchy: link to unknown node {tuple(pid)}")
                if pid.layer != n.id.layer + 1:
                    raise ValueError(
                        f"invalid hierarchy: node {tuple(n.id)} links to {tuple(pid)}, "
                        "parents must sit exactly one layer deeper"
                    )
                reference_counts[pid] += 1
            elif role == "lengthscale" and not src.value > 0:
                raise ValueError(f"fixed lengthscale must be positive, got {src.value}")
            elif role == "magnitude" and src.value < 0:
                # zero magnitude is allowed as a degenerate (noise-free) edge case
                raise ValueError(f"fixed magnitude must be non-negative, got {src.value}")
    for i, count in reference_counts.items():
        if i.layer == 1:
            continue
        if count == 0:
            raise ValueError(f"invalid hierarchy: node {tuple(i)} drives no child parameter")
        if count > 1:
            raise ValueError(
                f"invalid hierarchy: node {tuple(i)} is shared by {count} links (strict tree)"
            )

    slices = {}
    offset = 0
    for n in nodes:
        slices[n.id] = slice(offset, offset + n.state_dim)
        offset += n.state_dim
    state_dim = offset

    H = np.zeros((1, state_dim))
    H[0, slices[NodeId(1, 1)].start] = 1.0

    theta = []
    for n in nodes:
        if isinstance(n.lengthscale_source, FixedValue):
            theta.append(n.lengthscale_source.value)
        if isinstance(n.magnitude_source, FixedValue):
            theta.append(n.magnitude_source.value)

    structure_key = tuple(
        (
            n.id.layer,
            n.id.position,
            n.smoothness_alpha,
            _source_descriptor(n.lengthscale_source),
            _source_descriptor(n.magnitude_source),
        )
        for n in nodes
    )
    return DgpModel(
        nodes=tuple(nodes),
        state_dim=state_dim,
        slices=slices,
        H=H,
        theta=np.asarray(theta, dtype=float),
        structure_key=structure_key,
        name=name,
    )


def _param_plans(model: DgpModel):
    """Static evaluation plan: how each node reads (ell, sigma) from (U, theta)."""
    plans = []
    theta_idx = 0
    for n in model.nodes:
        entry = {"slice": model.slices[n.id], "alpha": n.smoothness_alpha}
        for key, src in (("ell", n.lengthscale_source), ("sigma", n.magnitude_source)):
            if isinstance(src, FixedValue):
                entry[key] = ("theta", theta_idx)
                theta_idx += 1
            else:
                entry[key] = ("wrap", model.slices[NodeId(*src.parent)].start, src.wrapping)
        plans.append(entry)
    return plans


def _read_param(spec, u, theta):
    if spec[0] == "theta":
        return theta[spec[1]]
    _, idx, wrapping = spec
    return _wrap_value(wrapping, u[idx])


def make_drift_fn(model: DgpModel) -> Callable:
    """Joint drift as a pure function ``(U, theta) -> dU/dt`` (jax-traceable)."""
    plans = _param_plans(model)

    def drift(u, theta):
        parts = []
        for plan in plans:
            xs = u[plan["slice"]]
            alpha = plan["alpha"]
            d = alpha + 1
            ell = _read_param(plan["ell"], u, theta)
            kappa = jnp.sqrt(2.0 * (alpha + 0.5)) / ell
            last = -sum(math.comb(d, m) * kappa ** (d - m) * xs[m] for m in range(d))
            parts.append(jnp.concatenate([xs[1:], jnp.reshape(last, (1,))]))
        return jnp.concatenate(parts)

    return drift


def make_dispersion_fn(model: DgpModel) -> Callable:
    """Joint dispersion ``(U, theta) -> beta(U)`` of shape (state_dim, num_nodes)."""
    plans = _param_plans(model)
    state_dim = model.state_dim

    def dispersion(u, theta):
        cols = []
        for j, plan in enumerate(plans):
            alpha = plan["alpha"]
            d = alpha + 1
            ell = _read_param(plan["ell"], u, theta)
            sigma = _read_param(plan["sigma"], u, theta)
            kappa = jnp.sqrt(2.0 * (alpha + 0.5)) / ell
            scale = (
                sigma
                * math.gamma(alpha + 1.0)
                / math.sqrt(math.gamma(2.0 * alpha + 1.0))
                * (2.0 * kappa) ** (alpha + 0.5)
            )
            col = jnp.zeros(state_dim).at[plan["slice"].stop - 1].set(scale)
            cols.append(col)
        return jnp.stack(cols, axis=1)

    return dispersion


def joint_drift(model: DgpModel, U) -> np.ndarray:
    """Evaluate the joint drift Lambda(U) U at a state vector."""
    U = jnp.asarray(U, dtype=jnp.float64)
    if U.shape != (model.state_dim,):
        raise ValueError(f"state must have shape ({model.state_dim},), got {U.shape}")
    return np.asarray(make_drift_fn(model)(U, jnp.asarray(model.theta)))


def joint_dispersion(model: DgpModel, U) -> np.ndarray:
    """Evaluate the joint dispersion beta(U) at a state vector."""
    U = jnp.asarray(U, dtype=jnp.float64)
    if U.shape != (model.state_dim,):
        raise ValueError(f"state must have shape ({model.state_dim},), got {U.shape}")
    return np.asarray(make_dispersion_fn(model)(U, jnp.asarray(model.theta)))


def _prior_mean_params(model: DgpModel, node: DgpNode) -> tuple[float, float]:
    """(ell, sigma) of a node with parent-driven values taken at the prior mean 0."""
    out = []
    for src in (node.lengthscale_source, node.magnitude_source):
        if isinstance(src, FixedValue):
            out.append(src.value)
        else:
            out.append(float(wrap(src.wrapping, 0.0)[0]))
    return out[0], out[1]


def initial_condition(model: DgpModel):
    """Zero-mean stationary initial belief.

    The covariance is block-diagonal: each node contributes the stationary
    covariance of its Matern SDE evaluated at its parents' prior means passed
    through the wrapping (or at its fixed values). A node with fixed magnitude
    zero contributes a zero block (degenerate, useful only for tests).
    """
    from .kalman import GaussianBelief

    P0 = np.zeros((model.state_dim, model.state_dim))
    for n in model.nodes:
        ell, sigma = _prior_mean_params(model, n)
        sl = model.slices[n.id]
        if sigma == 0.0:
            continue
        sde = matern_sde_coefficients(MaternSpec(n.smoothness_alpha, ell, sigma))
        P0[sl, sl] = solve_stationary_covariance(sde)
    return GaussianBelief(mean=np.zeros(model.state_dim), cov=P0)


@dataclass(frozen=True)
class PriorSamples:
    """Joint prior sample paths on a uniform grid."""

    times: np.ndarray
    states: np.ndarray  # (num_paths, len(times), state_dim)
    model: DgpModel

    def node_values(self, layer: int, position: int) -> np.ndarray:
        """Process values (first state component) of one node, (num_paths, T)."""
        return self.states[:, :, self.model.slices[NodeId(layer, position)].start]


def sample_prior(
    model: DgpModel,
    t_span,
    num_steps: int,
    seed: int,
    num_paths: int = 1,
    order: int = 3,
) -> PriorSamples:
    """Draw joint prior sample paths by stepping the discretized transition.

    Parameters
    ----------
    model : DgpModel
    t_span : float or (float, float)
        End time (start 0) or explicit (start, end).
    num_steps : int
        Number of transition steps; the grid has ``num_steps + 1`` points.
    seed : int
        PRNG seed; identical seeds give identical paths.
    num_paths : int
        Independent paths to draw.
    order : int
        Taylor moment expansion order of the transition (default 3).

    Raises
    ------
    RuntimeError
        If a path leaves float range, reporting the first blow-up time.
    """
    from .discretize import _transition_kernels

    if np.isscalar(t_span):
        t0, t1 = 0.0, float(t_span)
    else:
        t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError(f"time span must be increasing, got ({t0}, {t1})")
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    dt = (t1 - t0) / num_steps
    times = t0 + dt * np.arange(num_steps + 1)

    mean_fn, cov_fn = _transition_kernels(model, "tme", order)[:2]
    theta = jnp.asarray(model.theta)
    belief = initial_condition(model)
    # PSD (possibly singular) square root for the initial draw.
    eigval, eigvec = np.linalg.eigh(belief.cov)
    sqrt0 = jnp.asarray(eigvec * np.sqrt(np.clip(eigval, 0.0, None)))

    def step(carry, key):
        u = carry
        a = mean_fn(u, dt, theta)
        q = cov_fn(u, dt, theta)
        chol = jnp.linalg.cholesky(q + 1e-300 * jnp.eye(q.shape[0]))
        nxt = a + chol @ jax.random.normal(key, (model.state_dim,))
        return nxt, nxt

    @jax.jit
    def one_path(key):
        k0, k1 = jax.random.split(key)
        u0 = sqrt0 @ jax.random.normal(k0, (model.state_dim,))
        _, path = jax.lax.scan(step, u0, jax.random.split(k1, num_steps))
        return jnp.concatenate([u0[None, :], path], axis=0)

    keys = jax.random.split(jax.random.PRNGKey(seed), num_paths)
    states = np.asarray(jax.vmap(one_path)(keys))
    if not np.all(np.isfinite(states)):
        bad = np.argwhere(~np.isfinite(states).all(axis=2))
        first = bad[np.argmin(bad[:, 1])]
        raise RuntimeError(
            f"sample path diverged at t={times[first[1]]:.6g} (path {first[0]}, step {first[1]})"
        )
    return PriorSamples(times=times, states=states, model=model)


# ---------------------------------------------------------------------------
# Model description files


def _wrapping_from_spec(spec) -> Wrapping:
    if isinstance(spec, str):
        return Wrapping(kind=spec)
    return Wrapping(kind=spec["kind"], c=float(spec.get("c", 0.0)))


def _source_from_spec(spec) -> ParamSource:
    if "fixed" in spec:
        return FixedValue(value=float(spec["fixed"]))
    if "parent" in spec:
        layer, position = spec["parent"]
        return ParentLink(
            parent=NodeId(int(layer), int(position)),
            wrapping=_wrapping_from_spec(spec.get("wrapping", "exp")),
        )
    raise ValueError(f"parameter source needs 'fixed' or 'parent', got {spec}")


def model_from_dict(spec: dict) -> DgpModel:
    """Build a model from its description dictionary (see ``model_to_dict``)."""
    nodes = []
    for ns in spec["nodes"]:
        nodes.append(
            DgpNode(
                id=NodeId(int(ns["layer"]), int(ns["position"])),
                smoothness_alpha=int(ns["alpha"]),
                lengthscale_source=_source_from_spec(ns["lengthscale"]),
                magnitude_source=_source_from_spec(ns["magnitude"]),
            )
        )
    return build_dgp(nodes, name=spec.get("name", "model"))


def _source_to_spec(src: ParamSource) -> dict:
    if isinstance(src, FixedValue):
        return {"fixed": src.value}
    out = {"parent": [src.parent.layer, src.parent.position]}
    if src.wrapping.kind == "exp":
        out["wrapping"] = "exp"
    else:
        out["wrapping"] = {"kind": src.wrapping.kind, "c": src.wrapping.c}
    return out


def model_to_dict(model: DgpModel) -> dict:
    return {
        "name": model.name,
        "nodes": [
            {
                "layer": n.id.layer,
                "position": n.id.position,
                "alpha": n.smoothness_alpha,
                "lengthscale": _source_to_spec(n.lengthscale_source),
                "magnitude": _source_to_spec(n.magnitude_source),
            }
            for n in model.nodes
        ],
    }


def model_from_json(path) -> DgpModel:
    """Load a model description from a JSON file."""
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))
