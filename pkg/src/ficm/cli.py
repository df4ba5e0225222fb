"""Command-line entry point.

Subcommands: ``run``, ``plot-curve``, ``plot-bonus``, ``probe``,
``report-params``.  Exit codes: 0 success, 2 configuration error, 3 runtime
failure.  ``FICM_OUTPUT_ROOT`` overrides the output root for ``run``.
"""

from __future__ import annotations

import argparse
import sys

from .analysis import plot_bonus_map, plot_learning_curve, probe_forgetting, report_params
from .errors import ConfigError, FicmError, InvalidInputError
from .harness import run as run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ficm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a training run from a YAML config")
    p_run.add_argument("config", help="path to an experiment config")
    p_run.add_argument("--run-dir", default=None, help="explicit artifact directory")
    p_run.add_argument("--output-root", default=None, help="root for <root>/<run_id> (overrides config)")

    p_curve = sub.add_parser("plot-curve", help="aggregate learning curves from episode CSVs")
    p_curve.add_argument("csvs", nargs="+", help="episodes.csv paths (one per run)")
    p_curve.add_argument("--out", default="learning_curve.png")
    p_curve.add_argument("--window", type=int, default=100)

    p_bonus = sub.add_parser("plot-bonus", help="bonus scatter maps per episode range")
    p_bonus.add_argument("csv", help="bonus.csv path")
    p_bonus.add_argument("--ranges", required=True, help="comma-separated lo-hi ranges, e.g. 0-25,250-275")
    p_bonus.add_argument("--out", default=None, help="output filename prefix")

    p_probe = sub.add_parser("probe", help="frozen-probe bonus curve across checkpoints")
    p_probe.add_argument("run_dir")
    p_probe.add_argument("--freeze-episode", type=int, required=True)
    p_probe.add_argument("--stride", type=int, default=1)
    p_probe.add_argument("--out", default=None, help="output CSV (default <run_dir>/probe.csv)")

    p_params = sub.add_parser("report-params", help="parameter counts per architecture")
    p_params.add_argument("--resolution", type=int, default=42)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            run_dir = run_experiment(args.config, run_dir=args.run_dir, output_root=args.output_root)
            print(run_dir)
        elif args.command == "plot-curve":
            out_png, out_csv, *_ = plot_learning_curve(args.csvs, args.out, window=args.window)
            print(out_png)
            print(out_csv)
        elif args.command == "plot-bonus":
            ranges = [r.strip() for r in args.ranges.split(",") if r.strip()]
            for panel in plot_bonus_map(args.csv, ranges, out_prefix=args.out):
                print(f"{panel['path']} ({panel['count']} records)")
        elif args.command == "probe":
            out_csv = args.out or f"{args.run_dir.rstrip('/')}/probe.csv"
            steps, means = probe_forgetting(
                args.run_dir, freeze_episode=args.freeze_episode, stride=args.stride, out_csv=out_csv
            )
            for s, m in zip(steps, means):
                print(f"{s}\t{m:.6g}")
            print(out_csv)
        elif args.command == "report-params":
            print(report_params(resolution=args.resolution))
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FicmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
