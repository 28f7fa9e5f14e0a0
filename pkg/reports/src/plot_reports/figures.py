"""Build the report figures from harness CSVs.

Four figure kinds are supported:

- ``forgetting_curve``: per-task validation accuracy against continual
  learning time (epoch boundaries), one line per run and tracked task.
- ``heatmap``: firing frequency of one hidden layer, tasks by neurons.
- ``consistency_pair``: the first checkpoint's profile of one task next to
  the last checkpoint's, with pearson and overlap annotations.
- ``avg_accuracy_curve``: average accuracy A_t against tasks trained, mean
  across seeds with a band of a configurable number of sample stds.

Each builder returns the matplotlib figure plus the exact plotted arrays as
CSV lines, so a figure can always be diffed against its sources.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from plot_reports import schemas
from plot_reports.errors import DataError, SchemaError

KINDS = ("forgetting_curve", "heatmap", "consistency_pair", "avg_accuracy_curve")


@dataclass
class FigureSpec:
    """Everything needed to render one figure."""

    kind: str
    runs: list[Path]
    out: Path
    export_data: Path | None = None
    band_stds: float = 3.0
    layer: int = 1
    task: int | None = None  # 1-based; None means every task in the file
    tau: float = 0.1
    cmap: str = "viridis"
    dpi: int = 120
    title: str | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        if not self.runs:
            raise SchemaError("at least one run directory is required")
        if self.band_stds < 0:
            raise SchemaError("band_stds must be >= 0")
        if self.layer < 1:
            raise SchemaError("layer is 1-based and must be >= 1")


def _run_label(run_dir: Path) -> str:
    """Short human label for a run directory, e.g. sgd_dropout/3."""
    run_dir = Path(run_dir)
    if run_dir.name.isdigit() and run_dir.parent.name not in ("", "."):
        return f"{run_dir.parent.name}/{run_dir.name}"
    return run_dir.name


def _pearson(a: np.ndarray, b: np.ndarray):
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(da @ db) / denom


def _overlap(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((a > threshold) == (b > threshold)))


def build_forgetting_curve(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    export = ["run,task,time,accuracy"]
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    boundaries: set[int] = set()
    for r, run_dir in enumerate(spec.runs):
        curves = schemas.read_curves(Path(run_dir) / "curves.csv")
        label = _run_label(run_dir)
        tasks = sorted(set(int(t) for t in curves["task"]))
        if spec.task is not None:
            if spec.task not in tasks:
                raise DataError(f"{run_dir}: no curve for task {spec.task}")
            tasks = [spec.task]
        for k in tasks:
            rows = curves[curves["task"] == k]
            if k > 1:
                boundaries.add(int(rows["time"].min()))
            name = label if len(tasks) == 1 else f"{label} task {k}"
            ax.plot(
                rows["time"],
                rows["accuracy"],
                color=colors[r % len(colors)],
                alpha=max(0.35, 1.0 - 0.12 * (k - 1)),
                label=name,
            )
            for row in rows:
                export.append(
                    "%s,%d,%d,%.6f" % (label, k, row["time"], row["accuracy"])
                )
    for x in sorted(boundaries):
        ax.axvline(x - 0.5, color="0.85", linewidth=0.8, zorder=0)
    ax.set_xlabel("continual learning time (epoch boundaries)")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.set_title(spec.title or "task accuracy over the task sequence")
    fig.tight_layout()
    return fig, export


def _heatmap_matrix(spec: FigureSpec, run_dir: Path):
    """Task-by-neuron frequencies for one layer, from a run directory.

    Prefers an existing heatmap_layer<k>.csv (written by gating analysis) and
    falls back to the final profiles checkpoint.
    """
    run_dir = Path(run_dir)
    direct = run_dir / f"heatmap_layer{spec.layer}.csv"
    if direct.is_file():
        return schemas.read_heatmap(direct)
    checkpoints = schemas.profile_checkpoints(run_dir)
    if not checkpoints:
        raise SchemaError(
            f"{run_dir}: no heatmap_layer{spec.layer}.csv and no profile CSVs"
        )
    profiles = schemas.read_profiles(
        run_dir / f"profiles_after_task_{checkpoints[-1]}.csv"
    )
    task_ids = sorted(t for t, layer in profiles if layer == spec.layer)
    if not task_ids:
        raise SchemaError(f"{run_dir}: profiles contain no layer {spec.layer}")
    return task_ids, np.vstack([profiles[(t, spec.layer)] for t in task_ids])


def build_heatmap(spec: FigureSpec):
    if len(spec.runs) != 1:
        raise SchemaError("heatmap takes exactly one run directory")
    task_ids, matrix = _heatmap_matrix(spec, spec.runs[0])
    if matrix.min() < 0.0 or matrix.max() > 1.0:
        raise DataError(
            "frequencies must lie in [0, 1]; found range "
            f"[{matrix.min():.4f}, {matrix.max():.4f}]"
        )
    near_gate = (matrix <= spec.tau) | (matrix >= 1.0 - spec.tau)
    sparsity = float(near_gate.mean())
    fig, ax = plt.subplots(figsize=(8.0, 2.2 + 0.25 * len(task_ids)))
    image = ax.imshow(
        matrix, aspect="auto", cmap=spec.cmap, vmin=0.0, vmax=1.0,
        interpolation="nearest",
    )
    ax.set_yticks(range(len(task_ids)))
    ax.set_yticklabels([f"task {t + 1}" for t in task_ids])
    ax.set_xlabel("neuron")
    fig.colorbar(image, ax=ax, label="firing frequency")
    default = (
        f"layer {spec.layer} firing frequency "
        f"(sparsity {sparsity:.2f} at tau {spec.tau:g})"
    )
    ax.set_title(spec.title or default)
    fig.tight_layout()
    export = ["task_id," + ",".join(f"neuron_{i}" for i in range(matrix.shape[1]))]
    for t, row in zip(task_ids, matrix):
        export.append(str(t) + "," + ",".join("%.6f" % v for v in row))
    return fig, export


def build_consistency_pair(spec: FigureSpec):
    if len(spec.runs) != 1:
        raise SchemaError("consistency_pair takes exactly one run directory")
    run_dir = Path(spec.runs[0])
    checkpoints = schemas.profile_checkpoints(run_dir)
    if len(checkpoints) < 2:
        raise DataError(
            f"{run_dir}: need profiles from at least two checkpoints, "
            f"found {checkpoints}"
        )
    first, last = checkpoints[0], checkpoints[-1]
    task_id = (spec.task or 1) - 1
    rows = []
    for checkpoint in (first, last):
        profiles = schemas.read_profiles(
            run_dir / f"profiles_after_task_{checkpoint}.csv"
        )
        key = (task_id, spec.layer)
        if key not in profiles:
            raise DataError(
                f"{run_dir}: checkpoint {checkpoint} has no profile for "
                f"task {task_id + 1} layer {spec.layer}"
            )
        rows.append(profiles[key])
    pearson = _pearson(rows[0], rows[1])
    overlap = _overlap(rows[0], rows[1])
    fig, ax = plt.subplots(figsize=(8.0, 2.4))
    image = ax.imshow(
        np.vstack(rows), aspect="auto", cmap=spec.cmap, vmin=0.0, vmax=1.0,
        interpolation="nearest",
    )
    ax.set_yticks([0, 1])
    ax.set_yticklabels([f"after task {first}", f"after task {last}"])
    ax.set_xlabel("neuron")
    fig.colorbar(image, ax=ax, label="firing frequency")
    pearson_text = "n/a" if pearson is None else f"{pearson:.3f}"
    default = (
        f"task {task_id + 1} layer {spec.layer} gate consistency "
        f"(pearson {pearson_text}, overlap {overlap:.3f})"
    )
    ax.set_title(spec.title or default)
    fig.tight_layout()
    export = ["checkpoint,neuron_index,frequency"]
    for checkpoint, freqs in zip((first, last), rows):
        for i, f in enumerate(freqs):
            export.append("%d,%d,%.6f" % (checkpoint, i, f))
    return fig, export


def build_avg_accuracy_curve(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    export = ["label,t,mean,std,band"]
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for r, label_dir in enumerate(spec.runs):
        runs = schemas.seed_run_dirs(Path(label_dir))
        curves = []
        for run in runs:
            matrix = schemas.read_accuracy_matrix(run / "accuracy_matrix.csv")
            curves.append(schemas.average_accuracy_curve(matrix))
        lengths = {len(c) for c in curves}
        if len(lengths) != 1:
            raise SchemaError(
                f"{label_dir}: seed runs disagree on task count: {sorted(lengths)}"
            )
        stack = np.vstack(curves)
        mean = stack.mean(axis=0)
        if stack.shape[0] >= 2:
            std = stack.std(axis=0, ddof=1)
        else:
            std = np.zeros_like(mean)
            print(
                f"warning: {label_dir} has a single seed; no band drawn",
                file=sys.stderr,
            )
        band = spec.band_stds * std
        t_axis = np.arange(1, len(mean) + 1)
        label = _run_label(label_dir)
        color = colors[r % len(colors)]
        ax.plot(t_axis, mean, color=color, marker="o", markersize=3, label=label)
        if stack.shape[0] >= 2:
            ax.fill_between(t_axis, mean - band, mean + band, color=color, alpha=0.2)
        for t, (m, s, b) in enumerate(zip(mean, std, band), start=1):
            export.append(
                "%s,%d,%r,%r,%r" % (label, t, float(m), float(s), float(b))
            )
    ax.set_xlabel("tasks trained")
    ax.set_ylabel("average accuracy over seen tasks")
    ax.legend(fontsize=8)
    ax.set_title(spec.title or "average accuracy as tasks accumulate")
    fig.tight_layout()
    return fig, export


_BUILDERS = {
    "forgetting_curve": build_forgetting_curve,
    "heatmap": build_heatmap,
    "consistency_pair": build_consistency_pair,
    "avg_accuracy_curve": build_avg_accuracy_curve,
}


def render(spec: FigureSpec) -> None:
    """Build the figure, write the image, and export plotted data if asked."""
    spec.validate()
    fig, export = _BUILDERS[spec.kind](spec)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=spec.dpi)
    plt.close(fig)
    if spec.export_data is not None:
        export_path = Path(spec.export_data)
        export_path.parent.mkdir(parents=True, exist_ok=True)
        export_path.write_text("\n".join(export) + "\n")
