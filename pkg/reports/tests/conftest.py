"""Shared fixtures: tiny hand-written run directories in the harness layout."""

import pytest

from plotfix import write_curves, write_heatmap, write_matrix, write_profiles


@pytest.fixture
def curve_run(tmp_path):
    """One run: 2 tasks, 2 epochs each, accuracies chosen by hand."""
    run = tmp_path / "sgd" / "1"
    run.mkdir(parents=True)
    write_curves(
        run,
        [
            (1, 1, 0.50),
            (2, 1, 0.80),
            (3, 1, 0.70),
            (3, 2, 0.60),
            (4, 1, 0.65),
            (4, 2, 0.90),
        ],
    )
    return run


@pytest.fixture
def profile_run(tmp_path):
    """One run with profiles after tasks 1 and 3 plus a heatmap CSV."""
    run = tmp_path / "sgd_dropout" / "2"
    run.mkdir(parents=True)
    write_profiles(
        run,
        1,
        {(0, 1): [0.9, 0.1, 0.8, 0.2], (0, 2): [0.5, 0.5]},
    )
    write_profiles(
        run,
        3,
        {
            (0, 1): [0.8, 0.2, 0.9, 0.1],
            (1, 1): [0.1, 0.9, 0.2, 0.8],
            (2, 1): [0.0, 1.0, 0.0, 1.0],
            (0, 2): [0.4, 0.6],
            (1, 2): [0.3, 0.7],
            (2, 2): [0.2, 0.8],
        },
    )
    write_heatmap(
        run,
        1,
        [0, 1, 2],
        [
            [0.8, 0.2, 0.9, 0.1],
            [0.1, 0.9, 0.2, 0.8],
            [0.0, 1.0, 0.0, 1.0],
        ],
    )
    return run


@pytest.fixture
def label_dir(tmp_path):
    """A label directory with three seeds of hand-picked 3-task matrices."""
    label = tmp_path / "stable"
    matrices = {
        "1": [[0.90, 0, 0], [0.80, 0.70, 0], [0.70, 0.60, 0.50]],
        "2": [[0.92, 0, 0], [0.82, 0.72, 0], [0.72, 0.62, 0.52]],
        "3": [[0.88, 0, 0], [0.78, 0.68, 0], [0.68, 0.58, 0.48]],
    }
    for seed, matrix in matrices.items():
        run = label / seed
        run.mkdir(parents=True)
        write_matrix(run, matrix)
    return label
