#!/usr/bin/env python3
"""Generate the benchmark artifacts that the reproduction tests read.

Runs the table1, table2, and fig6 presets with the standard five seeds
into ``benchmarks/`` at the repository root, then prints each method's
final-row accuracies. Completed runs are detected and skipped, so the
script can resume after an interruption. A full pass from scratch is
several hours of CPU time; pass ``--presets table1`` or a short
``--seed-list`` for a quicker partial run.

Usage: python3 scripts/run_benchmarks.py [--out-dir DIR] [--data-dir DIR]
           [--presets NAME ...] [--seed-list 1,2,3] [--jobs N]
"""

from __future__ import annotations

import argparse
import subprocess
import sys
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]

try:
    from dropgate.harness import default_data_dir, load_config, run_experiment, summarize
except ImportError:  # running from a checkout without the package installed
    sys.path.insert(0, str(REPO_ROOT / "src"))
    from dropgate.harness import default_data_dir, load_config, run_experiment, summarize


def ensure_mnist(data_dir: Path) -> bool:
    if (data_dir / "train-images-idx3-ubyte").exists():
        return True
    print(f"MNIST files not found under {data_dir}; fetching")
    fetch = REPO_ROOT / "scripts" / "fetch_mnist.py"
    return subprocess.call([sys.executable, str(fetch), str(data_dir)]) == 0


def print_summary(summary: dict) -> None:
    for label in sorted(summary["methods"]):
        entry = summary["methods"][label]
        cells = "  ".join(entry["final_accuracy"][f"task_{i}"]["percent"]
                          for i in range(1, summary["T"] + 1))
        line = f"  {label:12s} {cells}"
        if "forgetting" in entry:
            line += f"   F {entry['forgetting']['mean']:.3f}"
        print(line)
    for deviation in summary["deviations"]:
        print(f"  deviation: {deviation}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", type=Path, default=REPO_ROOT / "benchmarks")
    parser.add_argument("--data-dir", type=Path, default=None)
    parser.add_argument("--presets", nargs="+", default=["table1", "table2", "fig6"])
    parser.add_argument("--seed-list", type=str, default=None,
                        help="comma-separated seeds overriding the default five")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    data_dir = args.data_dir if args.data_dir else default_data_dir()
    if not ensure_mnist(Path(data_dir)):
        print("could not obtain the MNIST files", file=sys.stderr)
        return 2
    seeds = None
    if args.seed_list:
        seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]

    t0 = time.time()
    for preset in args.presets:
        config = load_config(preset=preset, data_dir=data_dir,
                             out_dir=args.out_dir, seeds=seeds, jobs=args.jobs)
        print(f"[{preset}] {config.dataset} stream, T={config.T}, "
              f"{len(config.methods)} methods x {len(config.seeds)} seeds")
        run_experiment(config)
        summary = summarize(Path(args.out_dir) / config.name)
        print(f"[{preset}] summary:")
        print_summary(summary)
    print(f"all presets done in {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
