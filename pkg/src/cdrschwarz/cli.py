"""Command line interface.

Subcommands mirror the pipeline stages; all accept ``--config`` (defaults
apply when omitted), ``--out`` (overrides ``output.dir``), ``--seed``
(reserved; every stage is deterministic), and ``--lambda-grid`` (overrides
the monolithic regularization grid). Exit codes: 0 success, 2 configuration
error, 3 numerical failure (divergence or singular factorization).
"""

import argparse
import sys

import numpy as np

from . import driver
from .config import RunConfig, parse_config
from .errors import ConfigurationError, DivergenceError, FactorizationError


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="experiment configuration file "
                             "(omit for the default experiment)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: output.dir)")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; runs are deterministic")
    common.add_argument("--lambda-grid", metavar="L0,L1,...",
                        help="regularization grid for the monolithic "
                             "reduced model")
    parser = argparse.ArgumentParser(
        prog="cdrschwarz",
        description="Coupled finite element / reduced order subdomain "
                    "solver for the convection-diffusion-reaction equation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run-fom", parents=[common],
                   help="monolithic finite element reference run")
    sub.add_parser("run-schwarz", parents=[common],
                   help="all-FE coupled run")
    sub.add_parser("train", parents=[common],
                   help="train per-subdomain reduced operators")
    sub.add_parser("run-hybrid", parents=[common],
                   help="coupled run with the configured model assignment")
    sub.add_parser("run-mono-opinf", parents=[common],
                   help="monolithic reduced model trained on the reference")
    sub.add_parser("compare", parents=[common],
                   help="run every model and report times and errors")
    return parser


def _load_config(args):
    if args.config is None:
        cfg = RunConfig().validate()
    else:
        cfg = parse_config(args.config)
    return cfg


def _parse_grid(text):
    if text is None:
        return None
    try:
        grid = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigurationError(f"bad lambda grid {text!r}") from None
    if not grid:
        raise ConfigurationError("lambda grid is empty")
    if any(not (np.isfinite(l) and l >= 0.0) for l in grid):
        raise ConfigurationError(f"lambda grid values must be >= 0: {text}")
    return grid


def _iteration_summary(run):
    return (f"windows {run.iterations.shape[0]}, iterations "
            f"mean {float(np.mean(run.iterations)):.2f} / "
            f"max {int(np.max(run.iterations))}, "
            f"{'all converged' if run.converged else 'NOT ALL CONVERGED'}")


def _dispatch(args):
    cfg = _load_config(args)
    out_dir = args.out if args.out is not None else cfg.out_dir
    grid = _parse_grid(args.lambda_grid)
    if args.command == "run-fom":
        result = driver.cmd_run_fom(cfg, out_dir=out_dir)
        print(f"monolithic reference: {cfg.nx}x{cfg.ny} mesh, "
              f"{result.trajectory.n_times} snapshots, solve "
              f"{result.timings['solve_seconds']:.3f}s, outputs in {out_dir}")
    elif args.command == "run-schwarz":
        run = driver.cmd_run_schwarz(cfg, out_dir=out_dir)
        print(f"all-FE coupled run: {_iteration_summary(run)}, solve "
              f"{run.timings['solve_seconds']:.3f}s, outputs in {out_dir}")
    elif args.command == "train":
        result = driver.cmd_train(cfg, out_dir=out_dir)
        for i, item in sorted(result.trained.items()):
            print(f"subdomain {i + 1}: r={item.basis.r}, "
                  f"lambda={item.lam:g}, retained energy "
                  f"{item.energy:.12f}")
        print(f"training data run {result.timings['data_run_seconds']:.3f}s, "
              f"fitting {result.timings['train_seconds']:.3f}s, "
              f"operators in {out_dir}")
    elif args.command == "run-hybrid":
        run = driver.cmd_run_hybrid(cfg, out_dir=out_dir)
        print(f"hybrid coupled run: {_iteration_summary(run)}, solve "
              f"{run.timings['solve_seconds']:.3f}s, outputs in {out_dir}")
    elif args.command == "run-mono-opinf":
        result = driver.cmd_run_mono_opinf(cfg, out_dir=out_dir,
                                           lambda_grid=grid)
        status = "diverged" if result.diverged else "stable"
        print(f"monolithic reduced model: r={cfg.mono_r}, "
              f"lambda={result.lam:g} (grid of {len(result.grid)}), "
              f"{status}, solve {result.timings['solve_seconds']:.3f}s, "
              f"outputs in {out_dir}")
    else:
        report = driver.cmd_compare(cfg, out_dir=out_dir, lambda_grid=grid)
        print(report.to_text())
        print(f"report written to {out_dir}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, FactorizationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
