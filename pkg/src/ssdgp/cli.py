"""Command-line interface.

Subcommands: ``run`` (one experiment config), ``grid`` (hyperparameter
search), ``sample-prior`` (draw prior trajectories from a model file),
``cov-analysis`` (posterior covariance decay recursion), ``ingest`` (strain
file to filter-ready grid). Exit codes: 0 success, 2 configuration error,
3 solver failure on every trial.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    AllTrialsFailed,
    ConfigError,
    emit_results,
    grid_search,
    ingest_strain_csv,
    interpolation_grid,
    load_experiment_config,
    run_experiment,
)
from .covdecay import (
    CovRecursionConfig,
    gf_covariance_recursion,
    variance_floor,
    write_trace_csv,
)
from .model import model_from_dict, sample_prior


def _load_model_file(path):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    try:
        return model_from_dict(raw)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad model {path}: {exc}") from exc


def _cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    table = run_experiment(config)
    out = dict(config.output)
    if args.output:
        out["path"] = args.output
    if out.get("path"):
        emit_results(table, out.get("format", "csv"), out["path"])
        agg = table.aggregate
        mean = agg.get("rmse_mean")
        mean_s = "N/A" if mean is None else f"{mean:.6g}"
        print(f"{config.solver}: {agg['trials_ok']}/{config.trials} trials ok, "
              f"rmse mean {mean_s} -> {out['path']}")
    else:
        sys.stdout.write(table.to_csv_text())
    if table.aggregate.get("trials_ok", 0) == 0:
        print("all trials failed", file=sys.stderr)
        return 3
    return 0


def _cmd_grid(args) -> int:
    config = load_experiment_config(args.config)
    try:
        grid = json.loads(Path(args.grid).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {args.grid}: {exc}")
    result = grid_search(config, grid)
    out = dict(config.output)
    if args.output:
        out["path"] = args.output
    if out.get("path"):
        emit_results(result, out.get("format", "csv"), out["path"])
    else:
        sys.stdout.write(result.to_csv_text())
    if result.best_params is None:
        print("all grid cells failed", file=sys.stderr)
        return 3
    best = ", ".join(f"{k}={v:g}" for k, v in result.best_params.items())
    print(f"best: {best} (rmse {result.best_score:.6g})")
    return 0


def _cmd_sample_prior(args) -> int:
    model = _load_model_file(args.model)
    try:
        samples = sample_prior(model, (args.t0, args.t1), args.steps, args.seed,
                               num_paths=args.paths)
    except (ValueError, RuntimeError) as exc:
        print(f"sampling failed: {exc}", file=sys.stderr)
        return 3
    header = ["path", "time"] + [f"node_{n.id.layer}_{n.id.position}" for n in model.nodes]
    lines = [",".join(header)]
    for p in range(args.paths):
        for k, t in enumerate(samples.times):
            vals = [samples.node_values(n.id.layer, n.id.position)[p, k] for n in model.nodes]
            lines.append(f"{p},{t:.17g}," + ",".join(f"{v:.17g}" for v in vals))
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        print(f"{args.paths} path(s), {len(samples.times)} steps -> {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_cov_analysis(args) -> int:
    try:
        config = CovRecursionConfig(
            mu=args.mu, a=args.a, b=args.b, dt=args.dt, R=args.R, steps=args.steps,
            p0_ff=args.p0_ff, p0_fs=args.p0_fs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    trace = gf_covariance_recursion(config)
    floor = variance_floor(config)
    if args.output:
        write_trace_csv(trace, args.output)
        print(f"{config.steps} steps -> {args.output}")
    else:
        write_trace_csv(trace, sys.stdout)
    print(
        f"final |P_fs| {abs(trace.post_fs[-1]):.6g}, bound {trace.bound[-1]:.6g}, "
        f"variance floor {floor.floor:.6g} (eps {floor.epsilon:.3g})",
        file=sys.stderr,
    )
    return 0


def _cmd_ingest(args) -> int:
    data = ingest_strain_csv(args.input)
    grid = interpolation_grid(data, args.spacing)
    gaps = np.diff(data.times)
    summary = {
        "name": data.name,
        "points": len(data),
        "t_start": float(data.times[0]),
        "t_end": float(data.times[-1]),
        "median_dt": float(np.median(gaps)) if len(gaps) else 0.0,
        "grid_points": len(grid),
        "grid_spacing": args.spacing,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.output:
        lines = ["time,y,R,observed"]
        Rvec = np.broadcast_to(np.asarray(grid.R, dtype=float), (len(grid),))
        for k in range(len(grid)):
            obs = 1 if grid.observed[k] else 0
            lines.append(f"{grid.times[k]:.17g},{grid.y[k]:.17g},{Rvec[k]:.17g},{obs}")
        Path(args.output).write_text("\n".join(lines) + "\n")
        print(f"grid with {len(grid)} steps -> {args.output}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssdgp",
        description="State-space deep Gaussian process regression tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--output", help="override the output path from the config")
    p_run.set_defaults(func=_cmd_run)

    p_grid = sub.add_parser("grid", help="hyperparameter grid search")
    p_grid.add_argument("--config", required=True)
    p_grid.add_argument("--grid", required=True)
    p_grid.add_argument("--output")
    p_grid.set_defaults(func=_cmd_grid)

    p_sample = sub.add_parser("sample-prior", help="draw prior trajectories")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--seed", type=int, required=True)
    p_sample.add_argument("--t0", type=float, default=0.0)
    p_sample.add_argument("--t1", type=float, default=1.0)
    p_sample.add_argument("--steps", type=int, default=1000)
    p_sample.add_argument("--paths", type=int, default=1)
    p_sample.add_argument("--output")
    p_sample.set_defaults(func=_cmd_sample_prior)

    p_cov = sub.add_parser("cov-analysis", help="posterior covariance decay recursion")
    p_cov.add_argument("--mu", type=float, required=True)
    p_cov.add_argument("--a", type=float, required=True)
    p_cov.add_argument("--b", type=float, required=True)
    p_cov.add_argument("--dt", type=float, required=True)
    p_cov.add_argument("--R", type=float, required=True)
    p_cov.add_argument("--steps", type=int, required=True)
    p_cov.add_argument("--p0-ff", type=float, default=1.0, dest="p0_ff")
    p_cov.add_argument("--p0-fs", type=float, default=0.1, dest="p0_fs")
    p_cov.add_argument("--output")
    p_cov.set_defaults(func=_cmd_cov_analysis)

    p_ing = sub.add_parser("ingest", help="read a strain file and build a filter grid")
    p_ing.add_argument("--input", required=True)
    p_ing.add_argument("--spacing", type=float, default=1e-5)
    p_ing.add_argument("--output")
    p_ing.set_defaults(func=_cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AllTrialsFailed as exc:
        print(str(exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
