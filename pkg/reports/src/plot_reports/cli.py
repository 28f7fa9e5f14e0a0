"""Command line entry point for figure generation.

Usage:

    dropgate-plot <kind> --runs DIR [DIR ...] --out FILE [--export-data CSV]

where kind is one of forgetting_curve, heatmap, consistency_pair,
avg_accuracy_curve. Exit codes: 0 success, 1 usage error, 2 schema or data
error, 3 unexpected failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from plot_reports.errors import DataError, SchemaError
from plot_reports.figures import KINDS, FigureSpec, render


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dropgate-plot",
        description="Render continual-learning report figures from run CSVs.",
    )
    parser.add_argument("kind", choices=KINDS, help="which figure to draw")
    parser.add_argument(
        "--runs", nargs="+", required=True, type=Path,
        help="run directories (or label directories for avg_accuracy_curve)",
    )
    parser.add_argument("--out", required=True, type=Path, help="output image path")
    parser.add_argument(
        "--export-data", type=Path, default=None,
        help="also write the plotted arrays to this CSV",
    )
    parser.add_argument("--band-stds", type=float, default=3.0,
                        help="band half-width in sample stds (default 3)")
    parser.add_argument("--layer", type=int, default=1,
                        help="1-based hidden layer for profile figures")
    parser.add_argument("--task", type=int, default=None,
                        help="restrict to one 1-based task")
    parser.add_argument("--tau", type=float, default=0.1,
                        help="gate threshold used for the sparsity caption")
    parser.add_argument("--cmap", default="viridis", help="matplotlib colormap")
    parser.add_argument("--dpi", type=int, default=120, help="output resolution")
    parser.add_argument("--title", default=None, help="override the figure title")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = FigureSpec(
            kind=args.kind,
            runs=list(args.runs),
            out=args.out,
            export_data=args.export_data,
            band_stds=args.band_stds,
            layer=args.layer,
            task=args.task,
            tau=args.tau,
            cmap=args.cmap,
            dpi=args.dpi,
            title=args.title,
        )
        render(spec)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}")
    if args.export_data is not None:
        print(f"wrote {args.export_data}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
