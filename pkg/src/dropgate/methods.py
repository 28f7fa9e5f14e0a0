"""Sequential training loop and the compared continual-learning methods.

Six methods share one loop: plain SGD, SGD+Dropout (the only one using
dropout and per-task learning-rate decay), EWC (diagonal-Fisher
quadratic penalty), A-GEM (gradient projected against an episodic
reference batch), OGD (gradient projected orthogonal to stored
past-task logit gradients), and the MTL upper bound (fresh network on
the pooled data of all seen tasks).

A run is single-threaded and fully determined by (config, stream,
seed): one numpy Generator drives initialization, shuffling, dropout
masks and memory sampling in a fixed order.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import TaskStream
from .errors import ShapeError, TrainingDiverged, ValidationError
from .gating import ActivationProfile, firing_profile
from .metrics import AccuracyMatrix, evaluate
from .net import (
    EVAL,
    TRAIN,
    DenseNet,
    Gradients,
    OptimizerState,
    backward_from_dlogits,
    decay_lr,
    flat_dim,
    forward,
    loss_and_backward,
    sgd_momentum_step,
)

METHODS = ("sgd", "sgd_dropout", "ewc", "agem", "ogd", "mtl")

N_CLASSES = 10
INPUT_WIDTH = 784
AGEM_REF_BATCH = 64


@dataclass
class MethodConfig:
    """Hyperparameters for one training run of one method."""

    method: str
    label: str = ""
    keep_prob: float = 1.0
    lr: float = 0.01
    momentum: float = 0.8
    lr_decay: float = 1.0
    epochs_per_task: int = 5
    batch_size: int = 64
    hidden_width: int = 100
    memory_per_task: int = 200
    ewc_lambda: float = 0.3
    ewc_fisher_samples: int = 1000

    def __post_init__(self):
        if not self.label:
            self.label = self.method
        self.validate()

    def validate(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"unknown method {self.method!r}")
        if not 0.0 <= self.keep_prob <= 1.0:
            problems.append(f"keep_prob {self.keep_prob} outside [0,1]")
        if self.lr <= 0:
            problems.append(f"lr {self.lr} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"momentum {self.momentum} outside [0,1)")
        if not 0.0 < self.lr_decay <= 1.0:
            problems.append(f"lr_decay {self.lr_decay} outside (0,1]")
        if self.epochs_per_task < 1:
            problems.append("epochs_per_task must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.hidden_width < 1:
            problems.append("hidden_width must be >= 1")
        if self.memory_per_task < 0:
            problems.append("memory_per_task must be >= 0")
        if self.ewc_lambda < 0:
            problems.append("ewc_lambda must be >= 0")
        if self.ewc_fisher_samples < 1:
            problems.append("ewc_fisher_samples must be >= 1")
        if problems:
            raise ValidationError("; ".join(problems))

    def architecture(self) -> list[int]:
        return [INPUT_WIDTH, self.hidden_width, self.hidden_width, N_CLASSES]


@dataclass
class EwcState:
    """Running-consolidated anchor parameters and diagonal Fisher sum."""

    anchor_w: list[np.ndarray]
    anchor_b: list[np.ndarray]
    fisher_w: list[np.ndarray]
    fisher_b: list[np.ndarray]
    tasks_consolidated: int = 0


@dataclass
class EpisodicMemory:
    """Raw (input, label) examples kept per finished task."""

    capacity_per_task: int
    xs: list[np.ndarray] = field(default_factory=list)
    ys: list[np.ndarray] = field(default_factory=list)
    _cat: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __len__(self):
        return sum(len(y) for y in self.ys)

    def add_task(self, x: np.ndarray, y: np.ndarray, rng):
        take = min(self.capacity_per_task, len(y))
        idx = rng.choice(len(y), size=take, replace=False)
        self.xs.append(x[idx].copy())
        self.ys.append(y[idx].copy())
        self._cat = None

    def sample_reference(self, rng, size: int):
        """Uniform draw (no replacement) across everything stored."""
        if self._cat is None:
            self._cat = (np.concatenate(self.xs), np.concatenate(self.ys))
        x, y = self._cat
        idx = rng.choice(len(y), size=min(size, len(y)), replace=False)
        return x[idx], y[idx]


@dataclass
class OgdBasis:
    """Orthonormal directions spanning stored past-task gradients."""

    vectors: np.ndarray  # (k, dim) float64, rows orthonormal

    @classmethod
    def empty(cls, dim: int) -> "OgdBasis":
        return cls(np.zeros((0, dim)))

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class RunResult:
    """Everything one run produces."""

    accuracy_matrix: AccuracyMatrix
    curves: list[tuple[int, int, float]]  # (epoch time 1.., task 1.., accuracy)
    final_net: DenseNet
    method: str
    label: str
    seed: int
    wall_clock_s: float
    rng_name: str = "numpy-pcg64"
    # profiles[t] = firing profiles of tasks 1..t right after finishing task t
    profiles: dict[int, list[ActivationProfile]] | None = None


def ewc_consolidate(state: EwcState | None, net: DenseNet, task, n_samples: int, rng) -> EwcState:
    """Fold the just-finished task into the (anchor, Fisher) pair.

    The diagonal Fisher is the mean squared gradient of the
    log-likelihood of a label sampled from the model's own predictive
    distribution, estimated on n_samples training examples. Fisher sums
    across tasks; the anchor snaps to the current parameters.
    """
    x, y = task.train()
    if n_samples > len(x):
        warnings.warn(
            f"ewc_fisher_samples={n_samples} exceeds dataset size {len(x)}; clamping"
        )
        n_samples = len(x)
    idx = rng.choice(len(x), size=n_samples, replace=False)
    fw = [np.zeros(l.weights.shape, dtype=np.float64) for l in net.layers]
    fb = [np.zeros(l.biases.shape, dtype=np.float64) for l in net.layers]
    chunk = 1000
    for start in range(0, n_samples, chunk):
        xb = x[idx[start:start + chunk]]
        trace = forward(net, xb, EVAL)
        probs = _softmax64(trace.logits)
        sampled = _sample_rows(probs, rng)
        delta = probs
        delta[np.arange(len(xb)), sampled] -= 1.0  # per-example d(-loglik)/dlogits
        _accumulate_squared_grads(net, trace, delta, fw, fb)
    for a in fw:
        a /= n_samples
    for a in fb:
        a /= n_samples
    if state is None:
        state = EwcState(
            [l.weights.copy() for l in net.layers],
            [l.biases.copy() for l in net.layers],
            fw,
            fb,
        )
    else:
        state.anchor_w = [l.weights.copy() for l in net.layers]
        state.anchor_b = [l.biases.copy() for l in net.layers]
        state.fisher_w = [old + new for old, new in zip(state.fisher_w, fw)]
        state.fisher_b = [old + new for old, new in zip(state.fisher_b, fb)]
    state.tasks_consolidated += 1
    return state


def ewc_penalty_grad(net: DenseNet, state: EwcState, lam: float) -> Gradients:
    """Gradient of the quadratic anchor penalty: lam * F * (theta - theta*)."""
    if state is None or state.tasks_consolidated == 0:
        raise ValidationError("EWC state is empty; consolidate a task first")
    gw, gb = [], []
    for l, layer in enumerate(net.layers):
        if state.fisher_w[l].shape != layer.weights.shape:
            raise ShapeError("EWC state shapes do not match the network")
        gw.append((lam * state.fisher_w[l] * (layer.weights - state.anchor_w[l])).astype(layer.weights.dtype))
        gb.append((lam * state.fisher_b[l] * (layer.biases - state.anchor_b[l])).astype(layer.biases.dtype))
    return Gradients(gw, gb)


def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Remove the interfering component of g along the reference gradient.

    If g already has nonnegative dot product with g_ref it passes
    through untouched; otherwise the projection onto g_ref is
    subtracted so the reference loss is not ascended.
    """
    if g.shape != g_ref.shape:
        raise ShapeError(f"gradient shapes differ: {g.shape} vs {g_ref.shape}")
    ref_sq = float(g_ref @ g_ref)
    if ref_sq < 1e-24:  # |g_ref| < 1e-12
        return g
    dot = float(g @ g_ref)
    if dot >= 0:
        return g
    return g - (dot / ref_sq) * g_ref


def ogd_project(g: np.ndarray, basis: OgdBasis) -> np.ndarray:
    """Component of g orthogonal to every stored direction."""
    if len(basis) == 0:
        return g
    if g.shape[0] != basis.vectors.shape[1]:
        raise ShapeError(
            f"gradient length {g.shape[0]} != basis dimension {basis.vectors.shape[1]}"
        )
    return g - basis.vectors.T @ (basis.vectors @ g)


def ogd_extend_basis(net: DenseNet, task, k: int, basis: OgdBasis, rng) -> OgdBasis:
    """Append orthonormalized ground-truth-logit gradients of k stored examples.

    Each example contributes the flattened gradient of its true class's
    logit. Vectors are Gram-Schmidt-orthogonalized (two passes) against
    the existing basis; residuals with norm <= 1e-8 are linearly
    dependent and dropped.
    """
    x, y = task.train()
    k = min(k, len(x))
    idx = rng.choice(len(x), size=k, replace=False)
    vectors = basis.vectors
    new_rows = []
    for i in idx:
        trace = forward(net, x[i:i + 1], EVAL)
        dlogits = np.zeros((1, net.layers[-1].weights.shape[0]), dtype=net.dtype)
        dlogits[0, y[i]] = 1.0
        v = backward_from_dlogits(net, trace, dlogits).flatten().astype(np.float64)
        for _ in range(2):  # second pass cleans up float cancellation
            if len(vectors):
                v = v - vectors.T @ (vectors @ v)
            for row in new_rows:
                v = v - (row @ v) * row
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            new_rows.append(v / norm)
    if not new_rows:
        return OgdBasis(vectors)
    return OgdBasis(np.vstack([vectors] + [r[None] for r in new_rows]))


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sample_rows(probs: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per row."""
    u = rng.random((len(probs), 1))
    return (probs.cumsum(axis=1) > u).argmax(axis=1)


def _accumulate_squared_grads(net, trace, delta, fw, fb):
    """Add per-example squared parameter gradients implied by per-example
    logit gradients ``delta`` (no batch averaging)."""
    for l in range(len(net.layers) - 1, -1, -1):
        a_in = trace.inputs if l == 0 else trace.post_activations[l - 1]
        d2 = delta.astype(np.float64) ** 2
        fw[l] += d2.T @ (a_in.astype(np.float64) ** 2)
        fb[l] += d2.sum(axis=0)
        if l > 0:
            da = delta @ net.layers[l].weights
            delta = da * (trace.pre_activations[l - 1] > 0)


def _epoch_boundary(net, stream, upto_task, time_step, curves):
    """Record validation accuracy of every seen task; returns the row."""
    row = []
    for i in range(upto_task + 1):
        acc = evaluate(net, stream.tasks[i].validation())
        curves.append((time_step, i + 1, acc))
        row.append(acc)
    return row


def train_continual(config: MethodConfig, stream: TaskStream, seed: int,
                    record_profiles: bool = False,
                    curves_each_epoch: bool = True) -> RunResult:
    """Train tasks in order and fill the lower-triangular accuracy matrix.

    After each task: the learning rate decays by ``lr_decay``, the
    method's auxiliary state absorbs the finished task (Fisher /
    episodic memory / gradient basis), and row t of the matrix records
    the validation accuracy of every task seen so far.

    ``curves_each_epoch=False`` records curve points only at task ends,
    which skips most of the evaluation work on long streams; the accuracy
    matrix is unaffected.
    """
    config.validate()
    if config.method == "mtl":
        return mtl_train(config, stream, seed, upto=stream.count,
                         record_profiles=record_profiles,
                         curves_each_epoch=curves_each_epoch)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    net = DenseNet.init(config.architecture(), config.keep_prob, rng)
    opt = OptimizerState.zeros(net, config.lr, config.momentum)

    ewc_state: EwcState | None = None
    memory = EpisodicMemory(config.memory_per_task)
    basis = OgdBasis.empty(flat_dim(net))

    T = stream.count
    A = AccuracyMatrix(T)
    curves: list[tuple[int, int, float]] = []
    profiles: dict[int, list[ActivationProfile]] = {}
    time_step = 0

    for t, task in enumerate(stream.tasks):
        x, y = task.train()
        for epoch in range(config.epochs_per_task):
            order = rng.permutation(len(x))
            for start in range(0, len(x), config.batch_size):
                batch_idx = order[start:start + config.batch_size]
                trace = forward(net, x[batch_idx], TRAIN, rng)
                loss, grads = loss_and_backward(net, trace, y[batch_idx])
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at task {t + 1}, step {start // config.batch_size}"
                        f" (method={config.method}, lr={opt.lr})"
                    )
                if config.method == "ewc" and ewc_state is not None:
                    penalty = ewc_penalty_grad(net, ewc_state, config.ewc_lambda)
                    for l in range(len(net.layers)):
                        grads.weights[l] += penalty.weights[l]
                        grads.biases[l] += penalty.biases[l]
                elif config.method == "agem" and len(memory) > 0:
                    xr, yr = memory.sample_reference(rng, AGEM_REF_BATCH)
                    ref_trace = forward(net, xr, EVAL)
                    _, ref_grads = loss_and_backward(net, ref_trace, yr)
                    flat = agem_project(
                        grads.flatten().astype(np.float64),
                        ref_grads.flatten().astype(np.float64),
                    )
                    grads = Gradients.from_flat(net, flat)
                elif config.method == "ogd" and len(basis) > 0:
                    flat = ogd_project(grads.flatten().astype(np.float64), basis)
                    grads = Gradients.from_flat(net, flat)
                sgd_momentum_step(net, grads, opt)
            time_step += 1
            if curves_each_epoch or epoch == config.epochs_per_task - 1:
                row = _epoch_boundary(net, stream, t, time_step, curves)
        for i, acc in enumerate(row):
            A.set(t + 1, i + 1, acc)
        if record_profiles:
            profiles[t + 1] = [firing_profile(net, stream.tasks[i]) for i in range(t + 1)]
        if t < T - 1:
            decay_lr(opt, config.lr_decay)
            if config.method == "ewc":
                ewc_state = ewc_consolidate(ewc_state, net, task,
                                            config.ewc_fisher_samples, rng)
            elif config.method == "agem" and config.memory_per_task > 0:
                memory.add_task(x, y, rng)
            elif config.method == "ogd" and config.memory_per_task > 0:
                basis = ogd_extend_basis(net, task, config.memory_per_task, basis, rng)

    return RunResult(
        A, curves, net, config.method, config.label, seed,
        time.perf_counter() - t0,
        profiles=profiles if record_profiles else None,
    )


def pooled_batches(xs, ys, batch_size, epochs, rng):
    """Shuffled epoch batches over the union of several tasks' data."""
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            yield x[idx], y[idx]


def mtl_train(config: MethodConfig, stream: TaskStream, seed: int, upto: int,
              record_profiles: bool = False,
              curves_each_epoch: bool = True) -> RunResult:
    """Multi-task upper bound: row t comes from a fresh network trained on
    the pooled data of tasks 1..t.

    Each stage reseeds from ``seed``, so stage 1 follows the exact
    protocol of single-task SGD with the same seed.
    """
    config.validate()
    if upto > stream.count:
        raise ValidationError(f"upto={upto} exceeds stream length {stream.count}")
    t0 = time.perf_counter()
    A = AccuracyMatrix(upto)
    curves: list[tuple[int, int, float]] = []
    profiles: dict[int, list[ActivationProfile]] = {}
    net = None
    for t in range(1, upto + 1):
        rng = np.random.default_rng(seed)
        net = DenseNet.init(config.architecture(), config.keep_prob, rng)
        opt = OptimizerState.zeros(net, config.lr, config.momentum)
        splits = [stream.tasks[i].train() for i in range(t)]
        epoch_len = sum(len(s[1]) for s in splits)
        steps_per_epoch = -(-epoch_len // config.batch_size)
        step = 0
        for xb, yb in pooled_batches([s[0] for s in splits], [s[1] for s in splits],
                                     config.batch_size, config.epochs_per_task, rng):
            trace = forward(net, xb, TRAIN, rng)
            loss, grads = loss_and_backward(net, trace, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in MTL stage {t}")
            sgd_momentum_step(net, grads, opt)
            step += 1
            if step % steps_per_epoch == 0:
                final = step == steps_per_epoch * config.epochs_per_task
                if curves_each_epoch or final:
                    time_step = (t - 1) * config.epochs_per_task + step // steps_per_epoch
                    row = _epoch_boundary(net, stream, t - 1, time_step, curves)
        for i, acc in enumerate(row):
            A.set(t, i + 1, acc)
        if record_profiles:
            profiles[t] = [firing_profile(net, stream.tasks[i]) for i in range(t)]
    return RunResult(
        A, curves, net, "mtl", config.label, seed,
        time.perf_counter() - t0,
        profiles=profiles if record_profiles else None,
    )
