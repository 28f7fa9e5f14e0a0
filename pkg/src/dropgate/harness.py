"""Experiment orchestration: presets, run execution, artifact layout.

Runs land under ``out_dir/<experiment>/<label>/<seed>/`` with a flat
``config.txt`` snapshot (itself a valid input config), the accuracy
matrix and per-epoch curve CSVs, optional firing-profile CSVs, and a
``result.json``. ``summarize`` rebuilds cross-seed statistics purely
from the CSVs on disk, so an independent recomputation must agree with
it exactly.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import RNG_NAME, load_mnist, make_permuted_stream, make_rotated_stream
from .errors import ConfigError, DataError, ValidationError
from .gating import (
    heatmap_matrix,
    profile_consistency,
    profile_sparsity,
    profiles_from_csv,
    profiles_to_csv,
)
from .methods import METHODS, MethodConfig, train_continual
from .metrics import AccuracyMatrix, average_accuracy, forgetting

DATASETS = ("permuted", "rotated")
DEFAULT_SEEDS = [1, 2, 3, 4, 5]
SPARSITY_TAU = 0.1

# Methods that get dropout + per-task lr decay by default; everything else
# trains without either, which is how the comparison is defined. Halving the
# learning rate per task is what keeps early tasks alive on the 5-task
# benchmarks without freezing later ones; see the benchmark notes in README.
_DROPOUT_DEFAULTS = {"keep_prob": 0.5, "lr_decay": 0.5}


@dataclass
class ExperimentConfig:
    """Fully explicit description of one experiment (methods x seeds)."""

    name: str
    dataset: str
    T: int
    methods: list[MethodConfig]
    seeds: list[int]
    data_dir: Path
    out_dir: Path
    hidden_width: int = 100
    record_profiles: bool = False
    curves_each_epoch: bool = True
    jobs: int = 1
    resume: bool = True

    def validate(self):
        problems = []
        if self.dataset not in DATASETS:
            problems.append(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.T < 1:
            problems.append(f"T must be >= 1, got {self.T}")
        if not self.seeds:
            problems.append("seeds list must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            problems.append("seeds must be distinct")
        if not self.methods:
            problems.append("methods list must not be empty")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            problems.append(f"method labels must be distinct, got {labels}")
        if self.hidden_width < 1:
            problems.append("hidden_width must be >= 1")
        if self.jobs < 1:
            problems.append("jobs must be >= 1")
        for m in self.methods:
            try:
                m.validate()
            except ValidationError as e:
                problems.append(f"method {m.label}: {e}")
        if problems:
            raise ConfigError(problems)


def method_config(method: str, hidden_width: int = 100, **overrides) -> MethodConfig:
    """Per-method defaults: only sgd_dropout gets dropout and lr decay."""
    if method not in METHODS:
        raise ConfigError([f"unknown method {method!r}"])
    kwargs = dict(hidden_width=hidden_width)
    if method == "sgd_dropout":
        kwargs.update(_DROPOUT_DEFAULTS)
    kwargs.update(overrides)
    return MethodConfig(method, **kwargs)


def preset_config(preset: str, data_dir, out_dir, seeds=None) -> ExperimentConfig:
    """Expand a named experiment preset into a fully explicit config.

    ``seeds=None`` means the standard five seeds; an explicit empty list
    is rejected downstream.
    """
    preset = preset.replace("-", "_")
    seeds = list(seeds) if seeds is not None else list(DEFAULT_SEEDS)
    dd, od = Path(data_dir), Path(out_dir)

    def cfg(dataset, T, methods, width=100, profiles=False, each_epoch=True):
        return ExperimentConfig(preset, dataset, T, methods, seeds, dd, od,
                                hidden_width=width, record_profiles=profiles,
                                curves_each_epoch=each_epoch)

    if preset in ("table1", "table2"):
        methods = [method_config(m) for m in
                   ("mtl", "ogd", "agem", "ewc", "sgd", "sgd_dropout")]
        return cfg("permuted" if preset == "table1" else "rotated", 5, methods,
                   profiles=True)
    if preset == "fig1":
        return cfg("rotated", 5, [method_config("sgd"), method_config("sgd_dropout")])
    if preset in ("fig2", "fig3"):
        methods = [
            method_config("sgd", label="plastic"),
            method_config("sgd_dropout", label="moderate", keep_prob=0.75),
            method_config("sgd_dropout", label="stable", keep_prob=0.5),
        ]
        return cfg("permuted" if preset == "fig2" else "rotated", 5, methods)
    if preset == "fig45":
        return cfg("permuted", 5, [method_config("sgd"), method_config("sgd_dropout")],
                   profiles=True)
    if preset == "fig6":
        # On the 20-task stream the decay compounds 19 times, so the gentler
        # 0.8 factor is the one that still lets late tasks train. Per-epoch
        # curves would triple the run time at T=20 and the scaled comparison
        # only reads task-end accuracies, so they stay off here.
        methods = [
            method_config("sgd", hidden_width=256, label="plastic"),
            method_config("sgd_dropout", hidden_width=256, label="stable",
                          lr_decay=0.8),
        ]
        return cfg("permuted", 20, methods, width=256, each_epoch=False)
    if preset == "sweep_dropout":
        methods = [
            method_config("sgd_dropout", keep_prob=k, label=f"keep_{int(k * 100):03d}")
            for k in (0.8, 0.7, 0.6, 0.5, 0.4)
        ]
        return cfg("permuted", 5, methods)
    raise ConfigError([f"unknown preset {preset!r}"])


_CONFIG_KEYS = {
    "experiment", "dataset", "T", "seeds", "methods", "labels", "hidden_width",
    "record_profiles", "curves_each_epoch", "keep_prob", "lr", "momentum",
    "lr_decay", "epochs_per_task", "batch_size", "memory_per_task",
    "ewc_lambda", "ewc_fisher_samples", "rng", "package_version",
}
_METHOD_FLOAT_KEYS = {"keep_prob", "lr", "momentum", "lr_decay", "ewc_lambda"}
_METHOD_INT_KEYS = {"epochs_per_task", "batch_size", "memory_per_task",
                    "ewc_fisher_samples"}


def parse_flat_config(text: str) -> dict:
    """Parse the flat key=value format; '#' starts a comment."""
    out, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path=None, *, data_dir, out_dir, preset=None, seeds=None,
                jobs=1, resume=True) -> ExperimentConfig:
    """Build an ExperimentConfig from a preset name or a config file.

    Every violation found is collected into one ConfigError rather than
    failing on the first.
    """
    if (path is None) == (preset is None):
        raise ConfigError(["exactly one of --preset / --config is required"])
    if preset is not None:
        config = preset_config(preset, data_dir, out_dir, seeds)
        config = replace(config, jobs=jobs, resume=resume)
        config.validate()
        return config

    raw = parse_flat_config(Path(path).read_text())
    problems = [f"unknown key {k!r}" for k in raw if k not in _CONFIG_KEYS]

    def take(key, conv, default=None):
        if key not in raw:
            return default
        try:
            return conv(raw[key])
        except (TypeError, ValueError):
            problems.append(f"key {key!r}: cannot parse {raw[key]!r}")
            return default

    name = take("experiment", str, "custom")
    dataset = take("dataset", str, "permuted")
    T = take("T", int, 5)
    hidden_width = take("hidden_width", int, 100)
    record_profiles = take("record_profiles", _parse_bool, False)
    curves_each_epoch = take("curves_each_epoch", _parse_bool, True)
    file_seeds = take("seeds", _parse_int_list, None)
    method_names = take("methods", _parse_str_list, None)
    labels = take("labels", _parse_str_list, None)
    if not method_names:
        problems.append("key 'methods' is required in config files")
        method_names = []
    if labels and len(labels) != len(method_names):
        problems.append("labels list length != methods list length")
        labels = None

    overrides = {}
    for key in _METHOD_FLOAT_KEYS:
        v = take(key, float)
        if v is not None:
            overrides[key] = v
    for key in _METHOD_INT_KEYS:
        v = take(key, int)
        if v is not None:
            overrides[key] = v

    methods = []
    for i, m in enumerate(method_names):
        label = labels[i] if labels else m
        try:
            methods.append(method_config(m, hidden_width=hidden_width,
                                         label=label, **overrides))
        except (ConfigError, ValidationError) as e:
            problems.append(str(e))
    if problems:
        raise ConfigError(problems)

    if seeds is not None:
        chosen_seeds = list(seeds)
    elif file_seeds is not None:
        chosen_seeds = file_seeds
    else:
        chosen_seeds = list(DEFAULT_SEEDS)
    config = ExperimentConfig(
        name, dataset, T, methods, chosen_seeds,
        Path(data_dir), Path(out_dir), hidden_width=hidden_width,
        record_profiles=record_profiles, curves_each_epoch=curves_each_epoch,
        jobs=jobs, resume=resume,
    )
    config.validate()
    return config


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(s)


def _parse_int_list(s: str) -> list[int]:
    return [int(t) for t in s.split(",") if t.strip()]


def _parse_str_list(s: str) -> list[str]:
    return [t.strip() for t in s.split(",") if t.strip()]


def run_snapshot(config: ExperimentConfig, mcfg: MethodConfig, seed: int) -> str:
    """Flat config capturing one run exactly; feeding it back regenerates it."""
    lines = [
        f"experiment={config.name}",
        f"dataset={config.dataset}",
        f"T={config.T}",
        f"hidden_width={mcfg.hidden_width}",
        f"record_profiles={str(config.record_profiles).lower()}",
        f"curves_each_epoch={str(config.curves_each_epoch).lower()}",
        f"seeds={seed}",
        f"methods={mcfg.method}",
        f"labels={mcfg.label}",
        f"keep_prob={mcfg.keep_prob}",
        f"lr={mcfg.lr}",
        f"momentum={mcfg.momentum}",
        f"lr_decay={mcfg.lr_decay}",
        f"epochs_per_task={mcfg.epochs_per_task}",
        f"batch_size={mcfg.batch_size}",
        f"memory_per_task={mcfg.memory_per_task}",
        f"ewc_lambda={mcfg.ewc_lambda}",
        f"ewc_fisher_samples={mcfg.ewc_fisher_samples}",
        f"rng={RNG_NAME}",
        f"package_version={__version__}",
    ]
    return "\n".join(lines) + "\n"


def build_stream(dataset: str, T: int, seed: int, base_train, base_val):
    if dataset == "permuted":
        return make_permuted_stream(base_train, base_val, T, seed)
    return make_rotated_stream(base_train, base_val, T)


def run_dir_for(config: ExperimentConfig, label: str, seed: int) -> Path:
    return Path(config.out_dir) / config.name / label / str(seed)


def _execute_run(config: ExperimentConfig, mcfg: MethodConfig, seed: int,
                 base_train, base_val) -> Path:
    rdir = run_dir_for(config, mcfg.label, seed)
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "config.txt").write_text(run_snapshot(config, mcfg, seed))

    stream = build_stream(config.dataset, config.T, seed, base_train, base_val)
    result = train_continual(mcfg, stream, seed,
                             record_profiles=config.record_profiles,
                             curves_each_epoch=config.curves_each_epoch)

    (rdir / "accuracy_matrix.csv").write_text(result.accuracy_matrix.to_csv())
    curve_lines = ["time,task,accuracy"]
    curve_lines += [f"{t},{task},{acc:.6f}" for t, task, acc in result.curves]
    (rdir / "curves.csv").write_text("\n".join(curve_lines) + "\n")
    if result.profiles:
        for t, profs in sorted(result.profiles.items()):
            (rdir / f"profiles_after_task_{t}.csv").write_text(profiles_to_csv(profs))

    A = result.accuracy_matrix
    summary = {
        "method": mcfg.method,
        "label": mcfg.label,
        "seed": seed,
        "T": config.T,
        "final_accuracies": [round(v, 6) for v in A.final_accuracies()],
        "average_accuracy": round(average_accuracy(A, config.T), 6),
        "forgetting": round(forgetting(A), 6) if config.T >= 2 else None,
        "wall_clock_s": round(result.wall_clock_s, 3),
        "rng": result.rng_name,
        "package_version": __version__,
    }
    (rdir / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    return rdir


def _worker(args):
    config, mcfg, seed = args
    base_train, base_val = load_mnist(config.data_dir)
    return _execute_run(config, mcfg, seed, base_train, base_val)


def run_experiment(config: ExperimentConfig, log=print) -> list[Path]:
    """Execute methods x seeds; failures are recorded and skipped over.

    With ``resume`` (the default), runs whose ``result.json`` already
    exists are left untouched; determinism makes that safe.
    """
    config.validate()
    if not Path(config.data_dir).exists():
        raise DataError(
            f"data directory {config.data_dir} does not exist -- "
            "run scripts/fetch_mnist.py or pass --data-dir"
        )
    pending, done = [], []
    for mcfg in config.methods:
        for seed in config.seeds:
            rdir = run_dir_for(config, mcfg.label, seed)
            if config.resume and (rdir / "result.json").exists():
                done.append(rdir)
            else:
                pending.append((config, mcfg, seed))
    if done:
        log(f"[{config.name}] resuming: {len(done)} runs already complete")

    failures = []
    if config.jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for args, outcome in zip(pending, pool.map(_try_worker, pending)):
                _record_outcome(args, outcome, done, failures, log)
    else:
        base_train, base_val = load_mnist(config.data_dir)
        for args in pending:
            outcome = _try_run(args, base_train, base_val)
            _record_outcome(args, outcome, done, failures, log)

    if failures and not done:
        raise RuntimeError(f"all {len(failures)} runs failed; first: {failures[0][1]}")
    return done


def _try_run(args, base_train, base_val):
    config, mcfg, seed = args
    try:
        return _execute_run(config, mcfg, seed, base_train, base_val)
    except Exception as e:  # noqa: BLE001 - isolate run failures
        return e


def _try_worker(args):
    try:
        return _worker(args)
    except Exception as e:  # noqa: BLE001
        return e


def _record_outcome(args, outcome, done, failures, log):
    config, mcfg, seed = args
    if isinstance(outcome, Exception):
        rdir = run_dir_for(config, mcfg.label, seed)
        rdir.mkdir(parents=True, exist_ok=True)
        (rdir / "error.txt").write_text(f"{type(outcome).__name__}: {outcome}\n")
        failures.append((rdir, outcome))
        log(f"[{config.name}] FAILED {mcfg.label}/{seed}: {outcome}")
    else:
        done.append(outcome)
        log(f"[{config.name}] finished {mcfg.label}/{seed}")


# ---------------------------------------------------------------------------
# Cross-seed summaries (computed from the CSVs on disk, not in-memory state)


def _percent(mean: float, std: float) -> str:
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, std


def load_run_matrices(experiment_dir: Path) -> dict[str, dict[int, AccuracyMatrix]]:
    """{label: {seed: AccuracyMatrix}} for every completed run on disk."""
    experiment_dir = Path(experiment_dir)
    out: dict[str, dict[int, AccuracyMatrix]] = {}
    for csv_path in sorted(experiment_dir.glob("*/*/accuracy_matrix.csv")):
        label = csv_path.parent.parent.name
        seed = int(csv_path.parent.name)
        out.setdefault(label, {})[seed] = AccuracyMatrix.from_csv(csv_path.read_text())
    if not out:
        raise DataError(f"no accuracy_matrix.csv artifacts under {experiment_dir}")
    return out


def summarize(experiment_dir: Path) -> dict:
    """Aggregate per-seed CSV artifacts into the cross-seed summary JSON."""
    experiment_dir = Path(experiment_dir)
    matrices = load_run_matrices(experiment_dir)
    Ts = {A.T for per_seed in matrices.values() for A in per_seed.values()}
    if len(Ts) != 1:
        raise ValidationError(f"inconsistent T across artifacts: {sorted(Ts)}")
    T = Ts.pop()

    summary = {"experiment": experiment_dir.name, "T": T, "methods": {}}
    for label in sorted(matrices):
        per_seed = matrices[label]
        seeds = sorted(per_seed)
        finals = np.stack([per_seed[s].final_accuracies() for s in seeds])
        entry = {
            "seeds": seeds,
            "final_accuracy": {},
            "per_seed_final": {str(s): [round(v, 6) for v in per_seed[s].final_accuracies()]
                               for s in seeds},
        }
        for i in range(T):
            mean, std = _mean_std(finals[:, i])
            entry["final_accuracy"][f"task_{i + 1}"] = {
                "mean": mean, "std": std, "percent": _percent(mean, std),
            }
        mean, std = _mean_std([average_accuracy(per_seed[s], T) for s in seeds])
        entry["average_accuracy"] = {"mean": mean, "std": std,
                                     "percent": _percent(mean, std)}
        if T >= 2:
            mean, std = _mean_std([forgetting(per_seed[s]) for s in seeds])
            entry["forgetting"] = {"mean": mean, "std": std}
        curve = []
        for t in range(1, T + 1):
            mean, std = _mean_std([average_accuracy(per_seed[s], t) for s in seeds])
            curve.append({"t": t, "mean": mean, "std": std, "band": 3.0 * std})
        entry["avg_accuracy_curve"] = curve
        summary["methods"][label] = entry

    summary["deviations"] = _ordering_deviations(summary["methods"])
    (experiment_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _ordering_deviations(methods: dict) -> list[str]:
    """Documented qualitative-ordering violations among the cited methods."""

    def task_mean(label, i):
        return methods[label]["final_accuracy"][f"task_{i}"]["mean"]

    out = []
    have = set(methods)
    for label in ("agem", "ogd"):
        if {label, "sgd"} <= have and task_mean(label, 1) <= task_mean("sgd", 1):
            out.append(
                f"{label} task 1 ({100 * task_mean(label, 1):.1f}) does not beat "
                f"sgd ({100 * task_mean('sgd', 1):.1f})"
            )
        if {label, "ewc"} <= have:
            for i in (1, 2):
                if task_mean(label, i) <= task_mean("ewc", i):
                    out.append(
                        f"{label} task {i} ({100 * task_mean(label, i):.1f}) does not "
                        f"beat ewc ({100 * task_mean('ewc', i):.1f})"
                    )
    return out


# ---------------------------------------------------------------------------
# Gating analysis over one run's recorded profiles


def analyze_gating(run_dir: Path, tau: float = SPARSITY_TAU) -> dict:
    """Heatmap matrices and gating scores from a run's profile CSVs."""
    run_dir = Path(run_dir)
    checkpoint_files = sorted(run_dir.glob("profiles_after_task_*.csv"),
                              key=lambda p: int(p.stem.rsplit("_", 1)[1]))
    if not checkpoint_files:
        raise DataError(f"no profiles_after_task_*.csv under {run_dir} "
                        "(was the run made with record_profiles?)")
    checkpoints = {int(p.stem.rsplit("_", 1)[1]): profiles_from_csv(p.read_text())
                   for p in checkpoint_files}
    final_t = max(checkpoints)
    final_profiles = checkpoints[final_t]
    n_layers = len(final_profiles[0].frequencies)

    report = {"run_dir": str(run_dir), "final_checkpoint": final_t, "tau": tau,
              "binarize_threshold": 0.5, "layers": {}}
    for layer in range(1, n_layers + 1):
        matrix = heatmap_matrix(final_profiles, layer)
        width = matrix.shape[1]
        header = "task_id," + ",".join(f"neuron_{j}" for j in range(width))
        rows = [f"{p.task_id}," + ",".join(f"{v:.6f}" for v in row)
                for p, row in zip(sorted(final_profiles, key=lambda p: p.task_id), matrix)]
        (run_dir / f"heatmap_layer{layer}.csv").write_text(
            header + "\n" + "\n".join(rows) + "\n")
        per_task = {str(p.task_id): profile_sparsity(p, tau, layer)
                    for p in final_profiles}
        report["layers"][str(layer)] = {
            "sparsity_per_task": per_task,
            "mean_sparsity": float(np.mean(list(per_task.values()))),
        }
    first = {p.task_id: p for p in checkpoints.get(1, [])}
    last = {p.task_id: p for p in final_profiles}
    if 0 in first and 0 in last and final_t > 1:
        pearson, overlap = profile_consistency(first[0], last[0])
        report["task1_consistency"] = {
            "pearson": pearson, "overlap": overlap,
            "compared_checkpoints": [1, final_t],
        }
    (run_dir / "gating_summary.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def default_data_dir() -> Path:
    env = os.environ.get("DROPGATE_DATA_DIR")
    if env:
        return Path(env)
    for candidate in (Path("data/mnist"), Path("/root/data/mnist")):
        if candidate.exists():
            return candidate
    return Path("data/mnist")
