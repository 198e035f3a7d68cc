"""Benchmark harness: signal generators, solver drivers, and result tables.

Everything here is deliberately deterministic: per-trial seeds are spawned
from the master seed, and emitted result files contain no timing or other
machine-dependent fields, so identical configs produce identical bytes.
Wall-clock timings are kept in the in-memory table only.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.optimize

from .batch import build_gram, matern_gram
from .kalman import ckf_filter, ekf_filter, nlpd, rts_smooth, step_sizes
from .mapest import (
    BatchMapProblem,
    SsMapProblem,
    batch_map_gradient,
    batch_map_loss,
    optimize_map,
    ss_map_gradient,
    ss_map_loss,
)
from .matern import MaternSpec
from .model import DgpModel, build_dgp, model_from_dict
from .particle import backward_simulation_smoother, bootstrap_pf
from .discretize import euler_maruyama, exact_lti, tme

__all__ = [
    "TimeSeriesData",
    "ExperimentConfig",
    "ResultTable",
    "TrialRow",
    "GridResult",
    "ConfigError",
    "AllTrialsFailed",
    "gen_rectangle",
    "gen_sinusoid",
    "rmse",
    "run_experiment",
    "grid_search",
    "ingest_strain_csv",
    "interpolation_grid",
    "emit_results",
    "load_experiment_config",
]

SOLVERS = ("gp-mle", "bmap", "ssmap", "ekfs", "ckfs", "pf", "pfbs")
SCHEMES = ("em", "tme-2", "tme-3", "exact")
_NEEDS_SCHEME = ("ssmap", "ekfs", "ckfs", "pf", "pfbs")


class ConfigError(ValueError):
    """Invalid experiment/grid configuration (CLI exit code 2)."""


class AllTrialsFailed(RuntimeError):
    """Every trial of an experiment failed (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Data containers and generators


@dataclass(frozen=True)
class TimeSeriesData:
    """A scalar time series with per-point noise variance.

    ``observed`` marks measurement steps; unobserved steps are carried through
    filters as prediction-only. ``truth`` holds the noiseless signal when it
    is known (synthetic benchmarks).
    """

    times: np.ndarray
    y: np.ndarray
    R: object
    truth: np.ndarray | None = None
    observed: np.ndarray | None = None
    name: str = ""

    def __len__(self) -> int:
        return len(self.times)


_RECT_LEVELS = (0.0, 1.0, 0.0, 0.6, 0.0, 0.4)


def _rectangle_truth(t: np.ndarray) -> np.ndarray:
    idx = np.minimum((np.asarray(t) * 6).astype(int), 5)
    return np.asarray(_RECT_LEVELS)[idx]


def gen_rectangle(T: int = 100, noise_var: float = 0.002, seed: int = 0) -> TimeSeriesData:
    """Piecewise-constant signal with two rectangles on [0, 1].

    ``T`` equally spaced points; the signal jumps between the levels
    (0, 1, 0, 0.6, 0, 0.4) on sixths of the unit interval.
    """
    times = np.linspace(0.0, 1.0, T)
    truth = _rectangle_truth(times)
    rng = np.random.default_rng(seed)
    y = truth + math.sqrt(noise_var) * rng.standard_normal(T)
    return TimeSeriesData(times=times, y=y, R=float(noise_var), truth=truth,
                          name="rectangle")


def _sinusoid_truth(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    return np.sin(7.0 * np.pi * np.cos(2.0 * np.pi * t**2) * t) ** 2 / (
        np.cos(5.0 * np.pi * t) + 2.0
    )


def gen_sinusoid(N: int = 2000, noise_var: float = 0.01, seed: int = 0) -> TimeSeriesData:
    """Composite sinusoid with time-varying frequency and magnitude on [0, 1]."""
    times = np.linspace(0.0, 1.0, N)
    truth = _sinusoid_truth(times)
    rng = np.random.default_rng(seed)
    y = truth + math.sqrt(noise_var) * rng.standard_normal(N)
    return TimeSeriesData(times=times, y=y, R=float(noise_var), truth=truth,
                          name="sinusoid")


def rmse(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment description.

    ``model`` is the model dict (None for the stationary GP baseline),
    ``data`` the generator spec, ``options`` solver-specific knobs.
    """

    solver: str
    data: dict
    model: dict | None = None
    scheme: str = "tme-3"
    trials: int = 1
    seed: int = 0
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver '{self.solver}' (choose from {', '.join(SOLVERS)})")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}' (choose from {', '.join(SCHEMES)})")
        if self.trials < 1:
            raise ConfigError(f"trials must be positive, got {self.trials}")
        kind = self.data.get("kind")
        if kind not in ("rectangle", "sinusoid", "strain"):
            raise ConfigError(f"unknown data kind '{kind}'")
        if kind == "strain" and "path" not in self.data:
            raise ConfigError("strain data needs a 'path'")
        if self.solver != "gp-mle" and self.model is None:
            raise ConfigError(f"solver '{self.solver}' needs a model")

    def build_model(self) -> DgpModel | None:
        if self.model is None:
            return None
        try:
            return model_from_dict(self.model)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad model: {exc}") from exc


def load_experiment_config(path) -> ExperimentConfig:
    """Load an experiment config JSON file, resolving a model file reference."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_experiment_config(raw, base_dir=path.parent)


def parse_experiment_config(raw: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    model = raw.get("model")
    if isinstance(model, str):
        model_path = Path(model)
        if base_dir is not None and not model_path.is_absolute():
            model_path = Path(base_dir) / model_path
        try:
            model = json.loads(model_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model {model_path}: {exc}") from exc
    known = {"model", "data", "solver", "scheme", "trials", "seed", "options", "output", "name"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "solver" not in raw:
        raise ConfigError("config needs a 'solver'")
    if "data" not in raw:
        raise ConfigError("config needs a 'data' section")
    try:
        return ExperimentConfig(
            solver=raw["solver"],
            data=dict(raw["data"]),
            model=model,
            scheme=raw.get("scheme", "tme-3"),
            trials=int(raw.get("trials", 1)),
            seed=int(raw.get("seed", 0)),
            options=dict(raw.get("options", {})),
            output=dict(raw.get("output", {})),
            name=str(raw.get("name", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _make_data(config: ExperimentConfig, seed: int) -> TimeSeriesData:
    spec = config.data
    kind = spec["kind"]
    if kind == "rectangle":
        return gen_rectangle(int(spec.get("n", 100)), float(spec.get("noise_var", 0.002)), seed)
    if kind == "sinusoid":
        return gen_sinusoid(int(spec.get("n", 2000)), float(spec.get("noise_var", 0.01)), seed)
    data = ingest_strain_csv(spec["path"])
    if "noise_var" in spec:
        data = replace(data, R=float(spec["noise_var"]))
    spacing = spec.get("spacing")
    if spacing is not None:
        data = interpolation_grid(data, float(spacing))
    return data


def _make_transition(model: DgpModel, scheme: str, data: TimeSeriesData):
    dt_hint = float(np.median(step_sizes(data.times)))
    if scheme == "em":
        return euler_maruyama(model, dt_hint)
    if scheme == "exact":
        return exact_lti(model, dt_hint)
    return tme(model, dt_hint, int(scheme.split("-")[1]))


# ---------------------------------------------------------------------------
# Solvers


@dataclass(frozen=True)
class SolverOutput:
    f_estimate: np.ndarray
    nlpd: float | None


def _matern_gram_with_grad(alpha: int, ell: float, sigma: float, times: np.ndarray):
    """Half-integer Matérn Gram plus derivatives w.r.t. (log ell, log sigma)."""
    spec = MaternSpec(smoothness_alpha=alpha, lengthscale=ell, magnitude=sigma)
    K = matern_gram(spec, times)
    tau = np.abs(times[:, None] - times[None, :])
    r = spec.kappa * tau
    lead = math.factorial(alpha) / math.factorial(2 * alpha)
    s = np.zeros_like(r)
    ds = np.zeros_like(r)
    for i in range(alpha + 1):
        c = math.factorial(alpha + i) / (math.factorial(i) * math.factorial(alpha - i))
        s += lead * c * (2.0 * r) ** (alpha - i)
        if i < alpha:
            ds += lead * c * 2.0 * (alpha - i) * (2.0 * r) ** (alpha - i - 1)
    dK_dlogell = sigma**2 * np.exp(-r) * r * (s - ds)
    return K, dK_dlogell, 2.0 * K


def _solve_gp_mle(data: TimeSeriesData, options: dict) -> SolverOutput:
    """Stationary Matérn GP baseline: MLE over (lengthscale, magnitude)."""
    alpha = int(options.get("mle_alpha", 1))
    times = np.asarray(data.times, dtype=float)
    n = len(times)
    y = np.asarray(data.y, dtype=float)
    Rdiag = np.broadcast_to(np.asarray(data.R, dtype=float), (n,))

    def nll_and_grad(params):
        ell, sigma = math.exp(params[0]), math.exp(params[1])
        K, dKl, dKs = _matern_gram_with_grad(alpha, ell, sigma, times)
        A = K + np.diag(Rdiag)
        try:
            chol = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            return 1e100, np.zeros(2)
        alpha_vec = np.linalg.solve(A, y)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        val = 0.5 * (y @ alpha_vec + logdet + n * math.log(2.0 * math.pi))
        Ainv = np.linalg.inv(A)
        W = Ainv - np.outer(alpha_vec, alpha_vec)
        grad = np.array([0.5 * np.sum(W * dKl), 0.5 * np.sum(W * dKs)])
        return val, grad

    span = times[-1] - times[0] if n > 1 else 1.0
    init = np.array([math.log(max(span / 10.0, 1e-6)), math.log(max(np.std(y), 1e-3))])
    res = scipy.optimize.minimize(nll_and_grad, init, jac=True, method="L-BFGS-B",
                                  options={"maxiter": 200})
    ell, sigma = math.exp(res.x[0]), math.exp(res.x[1])
    K, _, _ = _matern_gram_with_grad(alpha, ell, sigma, times)
    A = K + np.diag(Rdiag)
    f_hat = K @ np.linalg.solve(A, y)
    return SolverOutput(f_estimate=f_hat, nlpd=float(res.fun))


def _map_options(options: dict) -> dict:
    return dict(options.get("map", {}))


def _solve_bmap(model: DgpModel, data: TimeSeriesData, options: dict) -> SolverOutput:
    problem = BatchMapProblem.build(model, data)
    result = optimize_map(
        lambda x: batch_map_loss(problem, x),
        lambda x: batch_map_gradient(problem, x),
        problem.latents,
        _map_options(options),
    )
    f_hat = result.x[: problem.n_points]
    return SolverOutput(f_estimate=np.asarray(f_hat), nlpd=None)


def _solve_ssmap(model: DgpModel, transition, data: TimeSeriesData, options: dict) -> SolverOutput:
    problem = SsMapProblem.build(model, transition, data)
    result = optimize_map(
        lambda x: ss_map_loss(problem, x),
        lambda x: ss_map_gradient(problem, x),
        problem.trajectory,
        _map_options(options),
    )
    states = problem.states(result.x)
    return SolverOutput(f_estimate=states[1:, model.observed_index], nlpd=None)


def _solve_gaussian(model: DgpModel, transition, data: TimeSeriesData, method: str) -> SolverOutput:
    fo = ekf_filter(model, transition, data) if method == "ekfs" else ckf_filter(model, transition, data)
    smoothed = rts_smooth(model, transition, fo)
    h = model.observed_index
    f_hat = np.array([b.mean[h] for b in smoothed])
    return SolverOutput(f_estimate=f_hat, nlpd=nlpd(fo, data))


def _solve_particle(model: DgpModel, transition, data: TimeSeriesData, options: dict,
                    pf_seed: int, bs_seed: int, smooth: bool) -> SolverOutput:
    num_particles = int(options.get("num_particles", 1000))
    cloud = bootstrap_pf(model, transition, data, num_particles, pf_seed)
    if not smooth:
        return SolverOutput(f_estimate=cloud.f_mean(), nlpd=cloud.nlpd())
    draws = backward_simulation_smoother(cloud, int(options.get("num_draws", 200)), bs_seed)
    return SolverOutput(f_estimate=draws.f_draws().mean(axis=0), nlpd=cloud.nlpd())


def _run_solver(config: ExperimentConfig, model: DgpModel | None, data: TimeSeriesData,
                pf_seed: int, bs_seed: int) -> SolverOutput:
    solver = config.solver
    if solver == "gp-mle":
        return _solve_gp_mle(data, config.options)
    if solver == "bmap":
        return _solve_bmap(model, data, config.options)
    transition = _make_transition(model, config.scheme, data)
    if solver == "ssmap":
        return _solve_ssmap(model, transition, data, config.options)
    if solver in ("ekfs", "ckfs"):
        return _solve_gaussian(model, transition, data, solver)
    return _solve_particle(model, transition, data, config.options, pf_seed, bs_seed,
                           smooth=(solver == "pfbs"))


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True)
class TrialRow:
    trial: int
    seed: int
    rmse: float | None
    nlpd: float | None
    wall_time: float
    status: str  # "ok" or "failed: <reason>"


@dataclass(frozen=True)
class ResultTable:
    """Per-trial metric rows plus aggregates over the successful trials."""

    name: str
    solver: str
    scheme: str
    trials: int
    seed: int
    data_kind: str
    rows: tuple
    aggregate: dict

    def to_json_obj(self) -> dict:
        rows = [
            {
                "trial": r.trial,
                "seed": r.seed,
                "rmse": r.rmse,
                "nlpd": r.nlpd,
                "status": r.status,
            }
            for r in self.rows
        ]
        return {
            "name": self.name,
            "solver": self.solver,
            "scheme": self.scheme,
            "trials": self.trials,
            "seed": self.seed,
            "data": self.data_kind,
            "rows": rows,
            "aggregate": self.aggregate,
        }

    def to_csv_text(self) -> str:
        def fmt(v):
            if v is None:
                return "N/A"
            if isinstance(v, float):
                return f"{v:.17g}"
            return str(v)

        lines = ["trial,seed,rmse,nlpd,status"]
        for r in self.rows:
            lines.append(",".join([str(r.trial), str(r.seed), fmt(r.rmse), fmt(r.nlpd),
                                   r.status.replace(",", ";")]))
        lines.append("")
        lines.append("metric,value")
        for key in sorted(self.aggregate):
            lines.append(f"{key},{fmt(self.aggregate[key])}")
        return "\n".join(lines) + "\n"


def _trial_seeds(master_seed: int, trials: int):
    """Independent (data, pf, smoother) seeds per trial, all from the master."""
    children = np.random.SeedSequence(master_seed).spawn(trials)
    out = []
    for child in children:
        state = child.generate_state(3)
        out.append((int(state[0]), int(state[1]), int(state[2])))
    return out


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run the configured solver over independently generated trials.

    Per-trial failures are recorded in the row status and excluded from the
    aggregates; only a fully failed run raises ``AllTrialsFailed`` downstream
    (the table itself is always returned).
    """
    model = config.build_model()
    rows = []
    for trial, (data_seed, pf_seed, bs_seed) in enumerate(_trial_seeds(config.seed, config.trials)):
        data = _make_data(config, data_seed)
        start = time.perf_counter()
        try:
            out = _run_solver(config, model, data, pf_seed, bs_seed)
            elapsed = time.perf_counter() - start
            score = rmse(data.truth, out.f_estimate) if data.truth is not None else None
            rows.append(TrialRow(trial=trial, seed=data_seed, rmse=score,
                                 nlpd=out.nlpd, wall_time=elapsed, status="ok"))
        except (RuntimeError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            elapsed = time.perf_counter() - start
            if isinstance(exc, ConfigError):
                raise
            rows.append(TrialRow(trial=trial, seed=data_seed, rmse=None, nlpd=None,
                                 wall_time=elapsed, status=f"failed: {exc}"))

    ok = [r for r in rows if r.status == "ok"]
    aggregate: dict = {"trials_ok": len(ok), "trials_failed": len(rows) - len(ok)}
    scores = [r.rmse for r in ok if r.rmse is not None]
    if scores:
        aggregate["rmse_mean"] = float(np.mean(scores))
        aggregate["rmse_std"] = float(np.std(scores))
    nlpds = [r.nlpd for r in ok if r.nlpd is not None]
    if nlpds:
        aggregate["nlpd_mean"] = float(np.mean(nlpds))
        aggregate["nlpd_std"] = float(np.std(nlpds))
    return ResultTable(
        name=config.name,
        solver=config.solver,
        scheme=config.scheme if config.solver in _NEEDS_SCHEME else "",
        trials=config.trials,
        seed=config.seed,
        data_kind=config.data.get("kind", ""),
        rows=tuple(rows),
        aggregate=aggregate,
    )


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class GridResult:
    """Scores per grid cell plus the winning hyperparameter assignment."""

    keys: tuple
    cells: tuple  # rows: {"params": {...}, "score": float|None, "failures": int}
    best_params: dict | None
    best_score: float | None

    def to_json_obj(self) -> dict:
        return {
            "keys": list(self.keys),
            "cells": [dict(c) for c in self.cells],
            "best_params": self.best_params,
            "best_score": self.best_score,
        }

    def to_csv_text(self) -> str:
        lines = [",".join(list(self.keys) + ["rmse_mean", "failures"])]
        for cell in self.cells:
            params = cell["params"]
            score = cell["score"]
            score_s = "N/A" if score is None else f"{score:.17g}"
            lines.append(
                ",".join([f"{params[k]:.17g}" for k in self.keys])
                + f",{score_s},{cell['failures']}"
            )
        return "\n".join(lines) + "\n"


def _deepest_layer(model_dict: dict) -> int:
    return max(int(n["layer"]) for n in model_dict["nodes"])


def _apply_grid_point(model_dict: dict, assignment: dict) -> dict:
    """Return a copy of the model dict with grid values substituted."""
    out = json.loads(json.dumps(model_dict))
    deepest = _deepest_layer(out)
    for key, value in assignment.items():
        if key in ("ell", "sigma"):
            slot = "lengthscale" if key == "ell" else "magnitude"
            hit = False
            for node in out["nodes"]:
                if int(node["layer"]) == deepest and "fixed" in _slot_dict(node, slot):
                    node[slot] = {"fixed": value}
                    hit = True
            if not hit:
                raise ConfigError(f"grid key '{key}' matches no fixed {slot} in the last layer")
        elif key.startswith("magnitude:"):
            layer, pos = (int(v) for v in key.split(":", 1)[1].split(","))
            for node in out["nodes"]:
                if int(node["layer"]) == layer and int(node["position"]) == pos:
                    if "fixed" not in _slot_dict(node, "magnitude"):
                        raise ConfigError(f"grid key '{key}' targets a non-fixed magnitude")
                    node["magnitude"] = {"fixed": value}
                    break
            else:
                raise ConfigError(f"grid key '{key}' matches no node")
        else:
            raise ConfigError(f"unknown grid key '{key}'")
    return out


def _slot_dict(node: dict, slot: str) -> dict:
    val = node.get(slot, {})
    return val if isinstance(val, dict) else {}


def grid_search(config: ExperimentConfig, grid: dict) -> GridResult:
    """Exhaustive search over a hyperparameter grid, scored by mean RMSE.

    Grid keys: ``ell``/``sigma`` replace every fixed lengthscale/magnitude in
    the deepest layer (shared last-layer hyperparameters); ``magnitude:L,P``
    targets one node's fixed magnitude. Ties prefer smaller values in sorted
    key order; cells whose trials all fail score N/A and are skipped.
    """
    if config.model is None:
        raise ConfigError("grid search needs a model")
    if not grid:
        raise ConfigError("empty grid")
    keys = tuple(sorted(grid))
    value_lists = []
    for key in keys:
        values = grid[key]
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid key '{key}' needs a nonempty list of values")
        value_lists.append([float(v) for v in values])

    cells = []
    best = None  # (score, tiebreak values, params)
    for combo in itertools.product(*value_lists):
        assignment = dict(zip(keys, combo))
        cell_model = _apply_grid_point(config.model, assignment)
        cell_config = replace(config, model=cell_model)
        table = run_experiment(cell_config)
        score = table.aggregate.get("rmse_mean")
        failures = table.aggregate.get("trials_failed", 0)
        cells.append({"params": assignment, "score": score, "failures": failures})
        if score is not None and np.isfinite(score):
            rank = (score,) + combo
            if best is None or rank < best[0]:
                best = (rank, assignment)
    return GridResult(
        keys=keys,
        cells=tuple(cells),
        best_params=None if best is None else best[1],
        best_score=None if best is None else best[0][0],
    )


# ---------------------------------------------------------------------------
# Strain-file ingestion


def ingest_strain_csv(path) -> TimeSeriesData:
    """Read a two-column (time, strain) or indexed (strain + rate header) file.

    Lines starting with '#' are comments; a comment like ``# rate 16384``
    supplies the sample rate for single-column files. Values may be comma- or
    whitespace-separated.
    """
    path = Path(path)
    rate = None
    rows = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read strain file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            tokens = stripped.lstrip("#").replace("=", " ").replace(":", " ").split()
            if len(tokens) >= 2 and tokens[0].lower() == "rate":
                rate = float(tokens[1])
            continue
        parts = stripped.replace(",", " ").split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            if lineno == 1:
                continue  # header line
            raise ConfigError(f"bad line {lineno} in {path}: {stripped!r}")
    if not rows:
        raise ConfigError(f"no data rows in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"inconsistent column counts in {path}")
    width = widths.pop()
    arr = np.asarray(rows, dtype=float)
    if width >= 2:
        times, strain = arr[:, 0], arr[:, 1]
    elif rate is not None:
        times = np.arange(len(arr)) / rate
        strain = arr[:, 0]
    else:
        raise ConfigError(f"single-column file {path} needs a '# rate <hz>' header")
    order = np.argsort(times, kind="stable")
    times, strain = times[order], strain[order]
    if np.any(np.diff(times) <= 0):
        raise ConfigError(f"timestamps in {path} are not strictly increasing")
    return TimeSeriesData(times=times, y=strain, R=0.0, name=path.stem)


def interpolation_grid(data: TimeSeriesData, spacing: float = 1e-5) -> TimeSeriesData:
    """Insert prediction-only steps so the grid is at least ``spacing``-fine.

    Measurement points keep their values; inserted points carry the observed
    mask set to False and are skipped by filter updates.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    times = np.asarray(data.times, dtype=float)
    fill = np.arange(times[0], times[-1] + spacing / 2, spacing)
    # drop fill points that would collide with a measurement time
    pos = np.searchsorted(times, fill)
    left = np.abs(fill - times[np.clip(pos - 1, 0, len(times) - 1)])
    right = np.abs(times[np.clip(pos, 0, len(times) - 1)] - fill)
    keep = np.minimum(left, right) > spacing / 4
    fill = fill[keep]

    all_times = np.concatenate([times, fill])
    observed = np.concatenate([np.ones(len(times), bool), np.zeros(len(fill), bool)])
    y_all = np.concatenate([np.asarray(data.y, float), np.zeros(len(fill))])
    R_vec = np.broadcast_to(np.asarray(data.R, dtype=float), (len(times),))
    R_all = np.concatenate([R_vec, np.full(len(fill), np.median(R_vec) if len(R_vec) else 0.0)])
    order = np.argsort(all_times, kind="stable")
    return TimeSeriesData(
        times=all_times[order], y=y_all[order], R=R_all[order],
        truth=None, observed=observed[order], name=data.name,
    )


# ---------------------------------------------------------------------------
# Result emission


def emit_results(table, format: str, path) -> None:
    """Write a result table as CSV or JSON; content is seed-deterministic."""
    if format not in ("csv", "json"):
        raise ConfigError(f"unknown output format '{format}'")
    if format == "json":
        text = json.dumps(table.to_json_obj(), indent=2, sort_keys=True) + "\n"
    else:
        text = table.to_csv_text()
    Path(path).write_text(text)
