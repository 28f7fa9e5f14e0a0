"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
failure. Argument mistakes count as configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DataError
from .harness import (
    analyze_gating,
    default_data_dir,
    load_config,
    run_experiment,
    summarize,
)

PRESETS = ("table1", "table2", "fig1", "fig2", "fig3", "fig45", "fig6",
           "sweep-dropout")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError([message])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dropgate",
                     description="Continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment preset or config file")
    run.add_argument("--preset", choices=PRESETS)
    run.add_argument("--config", type=Path, help="flat key=value config file")
    run.add_argument("--data-dir", type=Path, default=None)
    run.add_argument("--out-dir", type=Path, default=Path("runs"))
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--seed-list", type=str, default=None,
                     help="comma-separated seeds overriding the preset")
    run.add_argument("--no-resume", action="store_true",
                     help="recompute runs even if artifacts already exist")

    summ = sub.add_parser("summarize", help="aggregate per-seed artifacts")
    summ.add_argument("--out-dir", type=Path, required=True,
                      help="experiment directory (out_dir/<experiment>)")

    gate = sub.add_parser("analyze-gating",
                          help="firing-frequency heatmaps and gating scores")
    gate.add_argument("--run-dir", type=Path, required=True,
                      help="single run directory containing profile CSVs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            seeds = None
            if args.seed_list:
                seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
            data_dir = args.data_dir if args.data_dir else default_data_dir()
            config = load_config(
                args.config, data_dir=data_dir, out_dir=args.out_dir,
                preset=args.preset, seeds=seeds, jobs=args.jobs,
                resume=not args.no_resume,
            )
            run_dirs = run_experiment(config)
            exp_dir = Path(args.out_dir) / config.name
            summary = summarize(exp_dir)
            print(f"{len(run_dirs)} runs complete under {exp_dir}")
            for label, entry in summary["methods"].items():
                print(f"  {label}: avg accuracy {entry['average_accuracy']['percent']}")
        elif args.command == "summarize":
            summary = summarize(args.out_dir)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "analyze-gating":
            report = analyze_gating(args.run_dir)
            print(json.dumps(report, indent=2, sort_keys=True))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
