import json

import numpy as np
import pytest

from dropgate.data import write_idx
from dropgate.errors import ConfigError, DataError, ValidationError
from dropgate.gating import ActivationProfile, profiles_to_csv
from dropgate.harness import (
    DEFAULT_SEEDS,
    ExperimentConfig,
    analyze_gating,
    load_config,
    method_config,
    parse_flat_config,
    preset_config,
    run_experiment,
    run_snapshot,
    summarize,
)
from dropgate.metrics import AccuracyMatrix


def write_synthetic_mnist(data_dir, train_set, val_set):
    data_dir.mkdir(parents=True, exist_ok=True)
    (data_dir / "train-images-idx3-ubyte").write_bytes(write_idx(train_set.images))
    (data_dir / "train-labels-idx1-ubyte").write_bytes(
        write_idx(train_set.labels.astype(np.uint8)))
    (data_dir / "t10k-images-idx3-ubyte").write_bytes(write_idx(val_set.images))
    (data_dir / "t10k-labels-idx1-ubyte").write_bytes(
        write_idx(val_set.labels.astype(np.uint8)))


@pytest.fixture()
def data_dir(tmp_path, synthetic_sets):
    d = tmp_path / "mnist"
    write_synthetic_mnist(d, *synthetic_sets)
    return d


def quick_config(data_dir, out_dir, **overrides):
    kwargs = dict(
        name="quick", dataset="permuted", T=2,
        methods=[method_config("sgd", hidden_width=8, epochs_per_task=1)],
        seeds=[1, 2], data_dir=data_dir, out_dir=out_dir,
        hidden_width=8, record_profiles=True,
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# config parsing


def test_parse_flat_config_basics():
    text = "a=1\n# comment\n\nb = two  # trailing\n"
    assert parse_flat_config(text) == {"a": "1", "b": "two"}


def test_parse_flat_config_collects_problems():
    with pytest.raises(ConfigError) as err:
        parse_flat_config("a=1\nbroken line\na=2\n")
    assert len(err.value.violations) == 2


def test_preset_table1_expansion(tmp_path):
    cfg = preset_config("table1", tmp_path, tmp_path)
    assert cfg.dataset == "permuted"
    assert cfg.T == 5
    assert cfg.hidden_width == 100
    assert cfg.seeds == DEFAULT_SEEDS
    assert cfg.record_profiles
    by_name = {m.method: m for m in cfg.methods}
    assert set(by_name) == {"mtl", "ogd", "agem", "ewc", "sgd", "sgd_dropout"}
    assert by_name["sgd_dropout"].keep_prob == 0.5
    assert by_name["sgd_dropout"].lr_decay == 0.5
    assert by_name["sgd"].keep_prob == 1.0
    assert by_name["sgd"].lr_decay == 1.0
    assert all(m.lr == 0.01 and m.momentum == 0.8 and m.epochs_per_task == 5
               and m.batch_size == 64 for m in cfg.methods)


def test_preset_table2_is_rotated(tmp_path):
    assert preset_config("table2", tmp_path, tmp_path).dataset == "rotated"


def test_preset_fig2_labels(tmp_path):
    cfg = preset_config("fig2", tmp_path, tmp_path)
    labels = {m.label: m for m in cfg.methods}
    assert set(labels) == {"plastic", "moderate", "stable"}
    assert labels["moderate"].keep_prob == 0.75
    assert labels["stable"].keep_prob == 0.5
    assert labels["plastic"].keep_prob == 1.0


def test_preset_fig6_expansion(tmp_path):
    cfg = preset_config("fig6", tmp_path, tmp_path)
    assert cfg.T == 20
    assert cfg.hidden_width == 256
    assert not cfg.curves_each_epoch
    labels = {m.label: m for m in cfg.methods}
    assert labels["stable"].keep_prob == 0.5
    assert labels["stable"].lr_decay == 0.8
    assert labels["plastic"].keep_prob == 1.0
    assert all(m.hidden_width == 256 for m in cfg.methods)


def test_preset_sweep_dropout(tmp_path):
    cfg = preset_config("sweep-dropout", tmp_path, tmp_path)
    keeps = sorted(m.keep_prob for m in cfg.methods)
    assert keeps == [0.4, 0.5, 0.6, 0.7, 0.8]


def test_unknown_preset(tmp_path):
    with pytest.raises(ConfigError):
        preset_config("table9", tmp_path, tmp_path)


def test_empty_seed_list_rejected(tmp_path):
    with pytest.raises(ConfigError, match="seeds"):
        load_config(None, data_dir=tmp_path, out_dir=tmp_path,
                    preset="table1", seeds=[])


def test_load_config_collects_all_violations(tmp_path):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("unknown_knob=1\nmethods=sgd,warp\nT=not_an_int\n")
    with pytest.raises(ConfigError) as err:
        load_config(cfg, data_dir=tmp_path, out_dir=tmp_path)
    msg = str(err.value)
    assert "unknown_knob" in msg
    assert "warp" in msg
    assert "T" in msg


def test_load_config_requires_methods(tmp_path):
    cfg = tmp_path / "empty.txt"
    cfg.write_text("dataset=permuted\n")
    with pytest.raises(ConfigError, match="methods"):
        load_config(cfg, data_dir=tmp_path, out_dir=tmp_path)


def test_load_config_applies_overrides(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(
        "experiment=demo\ndataset=rotated\nT=3\nmethods=sgd_dropout\n"
        "labels=soft\nkeep_prob=0.75\nlr=0.02\nseeds=4,5\nhidden_width=32\n"
    )
    config = load_config(cfg, data_dir=tmp_path, out_dir=tmp_path)
    assert config.name == "demo"
    assert config.dataset == "rotated"
    assert config.seeds == [4, 5]
    (m,) = config.methods
    assert m.label == "soft"
    assert m.keep_prob == 0.75
    assert m.lr == 0.02
    assert m.hidden_width == 32


def test_config_requires_exactly_one_source(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, data_dir=tmp_path, out_dir=tmp_path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "x.txt", data_dir=tmp_path, out_dir=tmp_path,
                    preset="table1")


def test_snapshot_round_trips_through_loader(tmp_path):
    cfg = preset_config("fig2", tmp_path / "d", tmp_path / "o")
    mcfg = [m for m in cfg.methods if m.label == "moderate"][0]
    snap = tmp_path / "snap.txt"
    snap.write_text(run_snapshot(cfg, mcfg, seed=3))
    loaded = load_config(snap, data_dir=tmp_path / "d", out_dir=tmp_path / "o")
    assert loaded.name == "fig2"
    assert loaded.seeds == [3]
    (m,) = loaded.methods
    assert m.method == "sgd_dropout"
    assert m.label == "moderate"
    assert m.keep_prob == 0.75
    assert m.lr_decay == 0.5


def test_duplicate_labels_rejected(tmp_path):
    methods = [method_config("sgd"), method_config("sgd")]
    cfg = ExperimentConfig("x", "permuted", 2, methods, [1], tmp_path, tmp_path)
    with pytest.raises(ConfigError, match="labels"):
        cfg.validate()


# ---------------------------------------------------------------------------
# running experiments


def test_run_experiment_writes_artifacts(data_dir, tmp_path):
    out = tmp_path / "runs"
    config = quick_config(data_dir, out)
    dirs = run_experiment(config, log=lambda *_: None)
    assert len(dirs) == 2
    for seed in (1, 2):
        rdir = out / "quick" / "sgd" / str(seed)
        assert (rdir / "config.txt").exists()
        A = AccuracyMatrix.from_csv((rdir / "accuracy_matrix.csv").read_text())
        assert A.T == 2 and A.is_complete()
        curves = (rdir / "curves.csv").read_text().splitlines()
        assert curves[0] == "time,task,accuracy"
        assert len(curves) == 1 + 1 * (1 + 2)  # header + per-boundary rows
        assert (rdir / "profiles_after_task_1.csv").exists()
        assert (rdir / "profiles_after_task_2.csv").exists()
        result = json.loads((rdir / "result.json").read_text())
        assert result["seed"] == seed
        assert result["method"] == "sgd"
        assert len(result["final_accuracies"]) == 2
        assert result["forgetting"] is not None


def test_task_end_curves_flow_through_runs(data_dir, tmp_path):
    out = tmp_path / "runs"
    config = quick_config(
        data_dir, out, seeds=[1], curves_each_epoch=False,
        methods=[method_config("sgd", hidden_width=8, epochs_per_task=2)],
    )
    run_experiment(config, log=lambda *_: None)
    rdir = out / "quick" / "sgd" / "1"
    assert "curves_each_epoch=false" in (rdir / "config.txt").read_text()
    curves = (rdir / "curves.csv").read_text().splitlines()
    assert len(curves) == 1 + (1 + 2)  # header + one boundary per task
    reloaded = load_config(rdir / "config.txt", data_dir=data_dir, out_dir=out)
    assert reloaded.curves_each_epoch is False


def test_run_experiment_is_deterministic(data_dir, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        run_experiment(quick_config(data_dir, out, seeds=[1], resume=False),
                       log=lambda *_: None)
    for name in ("accuracy_matrix.csv", "curves.csv", "profiles_after_task_2.csv",
                 "config.txt"):
        a = (out1 / "quick" / "sgd" / "1" / name).read_bytes()
        b = (out2 / "quick" / "sgd" / "1" / name).read_bytes()
        assert a == b, name


def test_run_experiment_resume_skips_finished(data_dir, tmp_path):
    out = tmp_path / "runs"
    config = quick_config(data_dir, out)
    run_experiment(config, log=lambda *_: None)
    kept = out / "quick" / "sgd" / "1" / "accuracy_matrix.csv"
    redo = out / "quick" / "sgd" / "2"
    stamp = kept.stat().st_mtime_ns
    (redo / "result.json").unlink()
    messages = []
    run_experiment(config, log=messages.append)
    assert kept.stat().st_mtime_ns == stamp  # untouched
    assert (redo / "result.json").exists()  # recomputed
    assert any("resuming" in m for m in messages)


def test_run_experiment_missing_data(tmp_path):
    config = quick_config(tmp_path / "nowhere", tmp_path / "runs")
    with pytest.raises(DataError, match="fetch_mnist"):
        run_experiment(config, log=lambda *_: None)


def test_run_experiment_records_partial_failures(data_dir, tmp_path):
    out = tmp_path / "runs"
    methods = [
        method_config("sgd", hidden_width=8, epochs_per_task=1),
        method_config("sgd", label="boom", hidden_width=8, epochs_per_task=1,
                      lr=1e12),
    ]
    config = quick_config(data_dir, out, methods=methods, seeds=[1])
    with np.errstate(all="ignore"):
        dirs = run_experiment(config, log=lambda *_: None)
    assert [d.name for d in dirs] == ["1"]
    boom = out / "quick" / "boom" / "1"
    assert "TrainingDiverged" in (boom / "error.txt").read_text()
    assert not (boom / "result.json").exists()


def test_run_experiment_raises_when_everything_fails(data_dir, tmp_path):
    methods = [method_config("sgd", label="boom", hidden_width=8,
                             epochs_per_task=1, lr=1e12)]
    config = quick_config(data_dir, tmp_path / "runs", methods=methods, seeds=[1])
    with np.errstate(all="ignore"):
        with pytest.raises(RuntimeError, match="all .* runs failed"):
            run_experiment(config, log=lambda *_: None)


def test_artifact_regenerates_from_its_snapshot(data_dir, tmp_path):
    out = tmp_path / "runs"
    run_experiment(quick_config(data_dir, out, seeds=[2]), log=lambda *_: None)
    original = out / "quick" / "sgd" / "2"
    config = load_config(original / "config.txt", data_dir=data_dir,
                         out_dir=tmp_path / "again")
    run_experiment(config, log=lambda *_: None)
    regenerated = tmp_path / "again" / "quick" / "sgd" / "2"
    assert (regenerated / "accuracy_matrix.csv").read_bytes() == \
        (original / "accuracy_matrix.csv").read_bytes()
    assert (regenerated / "curves.csv").read_bytes() == \
        (original / "curves.csv").read_bytes()


# ---------------------------------------------------------------------------
# summaries


def write_matrix(exp_dir, label, seed, rows):
    A = AccuracyMatrix(len(rows))
    for t, row in enumerate(rows, start=1):
        for i, v in enumerate(row, start=1):
            A.set(t, i, v)
    rdir = exp_dir / label / str(seed)
    rdir.mkdir(parents=True)
    (rdir / "accuracy_matrix.csv").write_text(A.to_csv())


def test_summarize_frozen_mean_std(tmp_path):
    exp = tmp_path / "exp"
    write_matrix(exp, "sgd", 1, [[0.7], [0.8, 0.9]])
    write_matrix(exp, "sgd", 2, [[0.7], [0.9, 0.9]])
    summary = summarize(exp)
    cell = summary["methods"]["sgd"]["final_accuracy"]["task_1"]
    assert np.isclose(cell["mean"], 0.85)
    assert np.isclose(cell["std"], 0.07071067811865477)
    assert cell["percent"] == "85.0 ± 7.1"
    assert (exp / "summary.json").exists()


def test_summarize_single_seed_reports_zero_std(tmp_path):
    exp = tmp_path / "exp"
    write_matrix(exp, "sgd", 1, [[0.5], [0.5, 0.5]])
    summary = summarize(exp)
    assert summary["methods"]["sgd"]["final_accuracy"]["task_1"]["std"] == 0.0


def test_summarize_matches_independent_recompute(tmp_path):
    rng = np.random.default_rng(0)
    exp = tmp_path / "exp"
    finals = {}
    for seed in (1, 2, 3):
        r1 = [float(rng.random())]
        r2 = [float(rng.random()), float(rng.random())]
        write_matrix(exp, "sgd", seed, [r1, r2])
        finals[seed] = r2
    summary = summarize(exp)
    arr = np.array([finals[s] for s in (1, 2, 3)])
    # the CSV stores 6 decimals, so recompute from the rounded values
    arr = np.round(arr, 6)
    for i in (0, 1):
        cell = summary["methods"]["sgd"]["final_accuracy"][f"task_{i + 1}"]
        assert cell["mean"] == float(arr[:, i].mean())
        assert cell["std"] == float(arr[:, i].std(ddof=1))
    curve = summary["methods"]["sgd"]["avg_accuracy_curve"]
    assert curve[1]["band"] == 3.0 * curve[1]["std"]
    assert np.isclose(curve[1]["mean"], float(arr.mean(axis=1).mean()))


def test_summarize_inconsistent_T(tmp_path):
    exp = tmp_path / "exp"
    write_matrix(exp, "sgd", 1, [[0.5], [0.5, 0.5]])
    write_matrix(exp, "ewc", 1, [[0.5]])
    with pytest.raises(ValidationError, match="inconsistent T"):
        summarize(exp)


def test_summarize_empty_dir(tmp_path):
    with pytest.raises(DataError):
        summarize(tmp_path / "void")


def test_summarize_flags_ordering_deviations(tmp_path):
    exp = tmp_path / "exp"
    # agem loses to sgd on task 1 and to ewc on task 2 -> two deviations
    write_matrix(exp, "sgd", 1, [[0.9], [0.6, 0.9]])
    write_matrix(exp, "agem", 1, [[0.9], [0.5, 0.4]])
    write_matrix(exp, "ewc", 1, [[0.9], [0.4, 0.8]])
    summary = summarize(exp)
    joined = " | ".join(summary["deviations"])
    assert "agem task 1" in joined
    assert "agem task 2" in joined
    # and a clean ordering produces none
    exp2 = tmp_path / "exp2"
    write_matrix(exp2, "sgd", 1, [[0.9], [0.5, 0.9]])
    write_matrix(exp2, "agem", 1, [[0.9], [0.8, 0.85]])
    write_matrix(exp2, "ewc", 1, [[0.9], [0.6, 0.8]])
    assert summarize(exp2)["deviations"] == []


# ---------------------------------------------------------------------------
# gating analysis over a run directory


def test_analyze_gating_outputs(tmp_path):
    rdir = tmp_path / "run"
    rdir.mkdir()
    cp1 = [ActivationProfile(0, [np.array([0.9, 0.1, 0.8, 0.2])], 100)]
    cp2 = [
        ActivationProfile(0, [np.array([0.8, 0.2, 0.9, 0.1])], 100),
        ActivationProfile(1, [np.array([0.02, 0.5, 0.97, 0.6])], 100),
    ]
    (rdir / "profiles_after_task_1.csv").write_text(profiles_to_csv(cp1))
    (rdir / "profiles_after_task_2.csv").write_text(profiles_to_csv(cp2))
    report = analyze_gating(rdir)
    assert report["final_checkpoint"] == 2
    assert report["layers"]["1"]["sparsity_per_task"]["0"] == 0.5
    assert report["layers"]["1"]["sparsity_per_task"]["1"] == 0.5
    # deviations d1=[.4,-.4,.3,-.3], d2=[.3,-.3,.4,-.4]: r = 0.48/0.5 = 0.96
    assert abs(report["task1_consistency"]["pearson"] - 0.96) < 1e-9
    assert report["task1_consistency"]["overlap"] == 1.0
    heat = (rdir / "heatmap_layer1.csv").read_text().splitlines()
    assert heat[0] == "task_id,neuron_0,neuron_1,neuron_2,neuron_3"
    assert heat[1] == "0,0.800000,0.200000,0.900000,0.100000"
    assert heat[2] == "1,0.020000,0.500000,0.970000,0.600000"
    assert (rdir / "gating_summary.json").exists()


def test_analyze_gating_requires_profiles(tmp_path):
    with pytest.raises(DataError, match="record_profiles"):
        analyze_gating(tmp_path)
