"""Rectangle benchmark: hierarchical filter-smoother vs. a stationary GP.

Runs the CKFS solver with the two-layer model and the stationary GP MLE
baseline on the same synthetic rectangle series, then prints the aggregate
RMSE/NLPD for each. Result tables land under ``--outdir``.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ssdgp.bench import emit_results, load_experiment_config, run_experiment

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs" / "experiments"
CONFIGS = ("rectangle_ckfs.json", "rectangle_gp_mle.json")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=None, help="override trial count")
    parser.add_argument("--seed", type=int, default=None, help="override base seed")
    parser.add_argument("--outdir", type=Path, default=Path("results"))
    args = parser.parse_args(argv)

    args.outdir.mkdir(parents=True, exist_ok=True)
    failures = False
    for name in CONFIGS:
        config = load_experiment_config(CONFIG_DIR / name)
        if args.trials is not None:
            config = replace(config, trials=args.trials)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        table = run_experiment(config)
        out_path = args.outdir / f"{config.name}.csv"
        emit_results(table, "csv", out_path)
        agg = table.aggregate
        if agg["trials_ok"] == 0:
            print(f"{config.name}: all {len(table.rows)} trials failed -> {out_path}")
            failures = True
            continue
        print(
            f"{config.name}: rmse_mean={agg['rmse_mean']:.4f} "
            f"nlpd_mean={agg['nlpd_mean']:.4f} "
            f"({agg['trials_ok']}/{len(table.rows)} trials ok) -> {out_path}"
        )
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
