"""Command-line interface: run, sweep, baseline, bound.

Exit codes: 0 success, 1 runtime failure (aborted training, missing
checkpoints), 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

import torch

from .config import PRESETS, load_config, preset_config
from .errors import ConfigError, WalError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML experiment config")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="named preset (base config when no --config)")
    parser.add_argument("--seed", type=int, help="run a single seed")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wal",
        description="Weak adaptation learning: training runs, ablation "
                    "sweeps and error-bound reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the (method x seed) grid")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run the configured sweep axis")
    _add_common(p_sweep)

    p_base = sub.add_parser("baseline", help="run one comparison method")
    _add_common(p_base)
    p_base.add_argument("--method", required=True,
                        choices=["bwa", "bt", "bf1", "bf2", "bdirect"])

    p_bound = sub.add_parser("bound", help="evaluate the error bound of a run")
    _add_common(p_bound)
    p_bound.add_argument("--run-dir", required=True,
                         help="a finished wal cell directory (stage checkpoints)")
    p_bound.add_argument("--pool-size", type=int, default=8)
    return parser


def _load(args) -> "ExperimentConfig":
    if args.config:
        config = load_config(args.config, preset=args.preset)
    elif args.preset:
        config = preset_config(args.preset)
    else:
        raise ConfigError("either --config or --preset is required")
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.out is not None:
        config.out_dir = args.out
    if args.workers is not None:
        config.workers = args.workers
    return config.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)  # determinism contract for metrics output
    try:
        config = _load(args)
        from . import runner

        if args.command == "run":
            runner.run_experiment(config)
            return 0
        if args.command == "baseline":
            runner.run_experiment(config, methods=[args.method])
            return 0
        if args.command == "sweep":
            runner.run_sweep(config)
            return 0
        if args.command == "bound":
            seed = args.seed if args.seed is not None else config.seeds[0]
            report = runner.bound_report_for_run(config, args.run_dir, seed,
                                                 pool_size=args.pool_size)
            runner.write_bound_report(report, args.out or config.out_dir)
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
