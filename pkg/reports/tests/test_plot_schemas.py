import numpy as np
import pytest

from plot_reports.errors import SchemaError
from plot_reports import schemas

from plotfix import write_matrix, write_profiles


def test_read_curves_sorted_by_task_then_time(curve_run):
    curves = schemas.read_curves(curve_run / "curves.csv")
    assert curves["task"].tolist() == [1, 1, 1, 1, 2, 2]
    assert curves["time"].tolist() == [1, 2, 3, 4, 3, 4]
    assert curves["accuracy"].tolist() == [0.5, 0.8, 0.7, 0.65, 0.6, 0.9]


def test_read_curves_names_missing_columns(tmp_path):
    path = tmp_path / "curves.csv"
    path.write_text("time,accuracy\n1,0.5\n")
    with pytest.raises(SchemaError, match="missing columns: task"):
        schemas.read_curves(path)


def test_read_curves_rejects_malformed_row(tmp_path):
    path = tmp_path / "curves.csv"
    path.write_text("time,task,accuracy\n1,2\n")
    with pytest.raises(SchemaError, match="malformed row"):
        schemas.read_curves(path)


def test_read_curves_missing_file(tmp_path):
    with pytest.raises(SchemaError, match="not found"):
        schemas.read_curves(tmp_path / "curves.csv")


def test_read_curves_empty_file(tmp_path):
    path = tmp_path / "curves.csv"
    path.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        schemas.read_curves(path)


def test_read_accuracy_matrix_values_and_nan_mask(tmp_path):
    write_matrix(tmp_path, [[0.9, 0, 0], [0.8, 0.7, 0], [0.7, 0.6, 0.5]])
    matrix = schemas.read_accuracy_matrix(tmp_path / "accuracy_matrix.csv")
    assert matrix.shape == (3, 3)
    assert matrix[0, 0] == 0.9
    assert matrix[2, 1] == 0.6
    assert np.isnan(matrix[0, 1]) and np.isnan(matrix[1, 2])


def test_read_accuracy_matrix_rejects_bad_column_name(tmp_path):
    path = tmp_path / "accuracy_matrix.csv"
    path.write_text("t,task_1,task_9\n1,0.5,\n2,0.5,0.5\n")
    with pytest.raises(SchemaError, match="task_2"):
        schemas.read_accuracy_matrix(path)


def test_read_accuracy_matrix_rejects_missing_diagonal_entry(tmp_path):
    path = tmp_path / "accuracy_matrix.csv"
    path.write_text("t,task_1,task_2\n1,0.5,\n2,0.5,\n")
    with pytest.raises(SchemaError, match="missing entries"):
        schemas.read_accuracy_matrix(path)


def test_read_accuracy_matrix_rejects_wrong_row_count(tmp_path):
    path = tmp_path / "accuracy_matrix.csv"
    path.write_text("t,task_1,task_2\n1,0.5,\n")
    with pytest.raises(SchemaError, match="expected 2 rows"):
        schemas.read_accuracy_matrix(path)


def test_read_accuracy_matrix_rejects_row_index_out_of_range(tmp_path):
    path = tmp_path / "accuracy_matrix.csv"
    path.write_text("t,task_1\n4,0.5\n")
    with pytest.raises(SchemaError, match="out of range"):
        schemas.read_accuracy_matrix(path)


def test_average_accuracy_curve_hand_values(tmp_path):
    write_matrix(tmp_path, [[0.9, 0], [0.8, 0.7]])
    matrix = schemas.read_accuracy_matrix(tmp_path / "accuracy_matrix.csv")
    curve = schemas.average_accuracy_curve(matrix)
    assert curve.tolist() == [0.9, pytest.approx(0.75)]


def test_read_profiles_keys_and_order(profile_run):
    profiles = schemas.read_profiles(profile_run / "profiles_after_task_1.csv")
    assert set(profiles) == {(0, 1), (0, 2)}
    assert profiles[(0, 1)].tolist() == [0.9, 0.1, 0.8, 0.2]
    assert profiles[(0, 2)].tolist() == [0.5, 0.5]


def test_read_profiles_rejects_gap_in_neuron_indices(tmp_path):
    path = tmp_path / "profiles_after_task_1.csv"
    path.write_text(
        "task_id,layer,neuron_index,frequency\n0,1,0,0.5\n0,1,2,0.5\n"
    )
    with pytest.raises(SchemaError, match="non-contiguous"):
        schemas.read_profiles(path)


def test_read_profiles_names_missing_columns(tmp_path):
    path = tmp_path / "profiles_after_task_1.csv"
    path.write_text("task_id,layer,frequency\n")
    with pytest.raises(SchemaError, match="missing columns: neuron_index"):
        schemas.read_profiles(path)


def test_read_heatmap_round_trip(profile_run):
    task_ids, matrix = schemas.read_heatmap(profile_run / "heatmap_layer1.csv")
    assert task_ids == [0, 1, 2]
    assert matrix.shape == (3, 4)
    assert matrix[2].tolist() == [0.0, 1.0, 0.0, 1.0]


def test_read_heatmap_rejects_bad_neuron_column(tmp_path):
    path = tmp_path / "heatmap_layer1.csv"
    path.write_text("task_id,neuron_0,neuron_5\n0,0.1,0.2\n")
    with pytest.raises(SchemaError, match="neuron_1"):
        schemas.read_heatmap(path)


def test_profile_checkpoints_sorted_numerically(tmp_path):
    for t in (10, 1, 2):
        write_profiles(tmp_path, t, {(0, 1): [0.5]})
    assert schemas.profile_checkpoints(tmp_path) == [1, 2, 10]


def test_seed_run_dirs_finds_seed_children(label_dir):
    runs = schemas.seed_run_dirs(label_dir)
    assert [r.name for r in runs] == ["1", "2", "3"]


def test_seed_run_dirs_accepts_single_run(label_dir):
    runs = schemas.seed_run_dirs(label_dir / "2")
    assert runs == [label_dir / "2"]


def test_seed_run_dirs_rejects_empty_directory(tmp_path):
    with pytest.raises(SchemaError, match="no accuracy_matrix.csv"):
        schemas.seed_run_dirs(tmp_path)
