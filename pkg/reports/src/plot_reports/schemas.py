"""Readers for the harness CSV schemas.

The experiment harness writes three kinds of CSV per run directory:

- ``curves.csv``: per-epoch validation accuracy, columns time,task,accuracy
  where time counts epoch boundaries 1..T*epochs and task is 1-based.
- ``accuracy_matrix.csv``: lower-triangular matrix, header t,task_1..task_T,
  cells above the diagonal left empty.
- ``profiles_after_task_<t>.csv``: firing frequencies, columns
  task_id,layer,neuron_index,frequency with 0-based task ids and 1-based
  hidden layers.

Gating analysis additionally writes ``heatmap_layer<k>.csv`` whose rows are
task_id followed by one frequency per neuron.

This module parses those files and nothing else; it deliberately does not
import the training package.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from plot_reports.errors import SchemaError

CURVE_COLUMNS = ["time", "task", "accuracy"]
PROFILE_COLUMNS = ["task_id", "layer", "neuron_index", "frequency"]


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found")
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    return lines


def _check_header(path: Path, header: str, expected: list[str]) -> None:
    got = [c.strip() for c in header.split(",")]
    missing = [c for c in expected if c not in got]
    if missing:
        raise SchemaError(
            f"{path}: missing columns: {', '.join(missing)} (header was {header!r})"
        )
    if got != expected:
        raise SchemaError(
            f"{path}: expected columns {','.join(expected)}, got {header!r}"
        )


def read_curves(path: Path) -> np.ndarray:
    """Parse curves.csv into a structured array with time, task, accuracy."""
    lines = _read_lines(path)
    _check_header(path, lines[0], CURVE_COLUMNS)
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise SchemaError(f"{path}: malformed row {line!r}")
        rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
    out = np.array(rows, dtype=[("time", "i8"), ("task", "i8"), ("accuracy", "f8")])
    return np.sort(out, order=["task", "time"])


def read_accuracy_matrix(path: Path) -> np.ndarray:
    """Parse accuracy_matrix.csv into a (T, T) array, NaN above the diagonal."""
    lines = _read_lines(path)
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "t" or len(header) < 2:
        raise SchemaError(f"{path}: expected header t,task_1,...; got {lines[0]!r}")
    for i, name in enumerate(header[1:], start=1):
        if name != f"task_{i}":
            raise SchemaError(f"{path}: column {i} should be task_{i}, got {name!r}")
    T = len(header) - 1
    if len(lines) - 1 != T:
        raise SchemaError(f"{path}: expected {T} rows, found {len(lines) - 1}")
    matrix = np.full((T, T), np.nan)
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != T + 1:
            raise SchemaError(f"{path}: malformed row {line!r}")
        t = int(parts[0])
        if not 1 <= t <= T:
            raise SchemaError(f"{path}: row index {t} out of range 1..{T}")
        for i, cell in enumerate(parts[1:], start=1):
            if cell.strip() == "":
                continue
            matrix[t - 1, i - 1] = float(cell)
    lower = np.tril_indices(T)
    if np.isnan(matrix[lower]).any():
        raise SchemaError(f"{path}: missing entries on or below the diagonal")
    return matrix


def average_accuracy_curve(matrix: np.ndarray) -> np.ndarray:
    """A_t for t = 1..T: mean accuracy over tasks 1..t after training task t."""
    T = matrix.shape[0]
    return np.array([matrix[t, : t + 1].mean() for t in range(T)])


def read_profiles(path: Path) -> dict[tuple[int, int], np.ndarray]:
    """Parse a profiles CSV into {(task_id, layer): frequencies by neuron}."""
    lines = _read_lines(path)
    _check_header(path, lines[0], PROFILE_COLUMNS)
    cells: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 4:
            raise SchemaError(f"{path}: malformed row {line!r}")
        key = (int(parts[0]), int(parts[1]))
        cells.setdefault(key, []).append((int(parts[2]), float(parts[3])))
    out = {}
    for key, pairs in cells.items():
        pairs.sort()
        indices = [i for i, _ in pairs]
        if indices != list(range(len(pairs))):
            raise SchemaError(f"{path}: non-contiguous neuron indices for {key}")
        out[key] = np.array([f for _, f in pairs])
    return out


def read_heatmap(path: Path) -> tuple[list[int], np.ndarray]:
    """Parse heatmap_layer<k>.csv into (task_ids, tasks-by-neurons matrix)."""
    lines = _read_lines(path)
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "task_id":
        raise SchemaError(f"{path}: expected header task_id,neuron_0,...; got {lines[0]!r}")
    for i, name in enumerate(header[1:]):
        if name != f"neuron_{i}":
            raise SchemaError(f"{path}: column {i + 1} should be neuron_{i}, got {name!r}")
    width = len(header) - 1
    task_ids = []
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != width + 1:
            raise SchemaError(f"{path}: malformed row {line!r}")
        task_ids.append(int(parts[0]))
        rows.append([float(c) for c in parts[1:]])
    return task_ids, np.array(rows)


def profile_checkpoints(run_dir: Path) -> list[int]:
    """Checkpoint numbers t for which profiles_after_task_<t>.csv exists."""
    found = []
    for path in Path(run_dir).glob("profiles_after_task_*.csv"):
        m = re.fullmatch(r"profiles_after_task_(\d+)\.csv", path.name)
        if m:
            found.append(int(m.group(1)))
    return sorted(found)


def seed_run_dirs(label_dir: Path) -> list[Path]:
    """Per-seed run directories under a label directory, sorted by seed.

    A label directory holds one subdirectory per seed, each with an
    accuracy_matrix.csv. If label_dir itself contains a matrix it is treated
    as a single run.
    """
    label_dir = Path(label_dir)
    if (label_dir / "accuracy_matrix.csv").is_file():
        return [label_dir]
    runs = [
        child
        for child in sorted(label_dir.iterdir(), key=lambda p: p.name)
        if child.is_dir() and (child / "accuracy_matrix.csv").is_file()
    ]
    if not runs:
        raise SchemaError(f"{label_dir}: no accuracy_matrix.csv found in or below it")
    return runs
