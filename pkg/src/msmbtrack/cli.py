"""Benchmark command line: `msmb-bench run` and `msmb-bench sweep`."""
from __future__ import annotations

import argparse
import sys

from .bench import run_benchmark, sweep
from .config import ConfigError, load_config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="scenario YAML file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--runs", type=int, default=1, help="Monte Carlo runs")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--filter", choices=["ms-member", "ms-tcphd"], default=None,
                        help="override the config's filter")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmb-bench",
                                     description="Multi-sensor multi-target tracking benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one Monte Carlo batch")
    _add_common(run_p)
    sweep_p = sub.add_parser("sweep", help="run a batch per axis value")
    _add_common(sweep_p)
    sweep_p.add_argument("--axis", required=True, choices=["s", "pd", "clutter"])
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated axis values, e.g. 0.3,0.5,0.9")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.runs < 1:
            raise ConfigError("--runs must be at least 1")
        if args.command == "run":
            result = run_benchmark(config, args.seed, args.runs, args.out,
                                   jobs=args.jobs, filter_name=args.filter)
            row = result.summary
            print(f"{row.filter_name}: median time-averaged OSPA "
                  f"{row.median_ospa:.3f} [{row.q1_ospa:.3f}, {row.q3_ospa:.3f}] "
                  f"over {args.runs} runs -> {args.out}")
        else:
            values = [float(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values must list at least one value")
            if args.axis == "s":
                values = [int(v) for v in values]
            rows = sweep(config, args.axis, values, args.seed, args.runs,
                         args.out, jobs=args.jobs, filter_name=args.filter)
            for value, row in rows:
                print(f"{args.axis}={value}: median {row.median_ospa:.3f} "
                      f"[{row.q1_ospa:.3f}, {row.q3_ospa:.3f}]")
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
