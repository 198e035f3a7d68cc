"""Trace the gain-driven collapse of the signal/parameter cross-covariance.

Runs the two-dimensional moment recursion for a linearized signal driven by
an Ornstein-Uhlenbeck parameter process, writes the per-step trace, and
reports where the measurement-noise floor puts the best achievable
posterior variance.
"""

import argparse
import sys
from pathlib import Path

from ssdgp.covdecay import (
    CovRecursionConfig,
    gf_covariance_recursion,
    variance_floor,
    write_trace_csv,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mu", type=float, default=-1.0, help="signal mean-reversion rate")
    parser.add_argument("--a", type=float, default=-1.0, help="parameter mean-reversion rate")
    parser.add_argument("--b", type=float, default=1.0, help="parameter diffusion")
    parser.add_argument("--dt", type=float, default=0.1)
    parser.add_argument("--R", type=float, default=0.1, help="measurement noise variance")
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--p0-fs", type=float, default=0.1, dest="p0_fs")
    parser.add_argument("--output", type=Path, default=Path("cov_decay_trace.csv"))
    args = parser.parse_args(argv)

    config = CovRecursionConfig(
        mu=args.mu, a=args.a, b=args.b, dt=args.dt, R=args.R,
        steps=args.steps, p0_fs=args.p0_fs,
    )
    trace = gf_covariance_recursion(config)
    write_trace_csv(trace, args.output)

    floor = variance_floor(config)
    print(f"final |P_fs| = {abs(trace.post_fs[-1]):.3e} after {args.steps} steps")
    print(f"variance floor: {floor}")
    print(f"trace -> {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
