"""Per-neuron firing analysis and the dropout activation-variance check.

A neuron "fires" on an example when its ReLU output is strictly
positive. Firing frequencies are measured in eval mode over a task's
full validation set, so the numbers are mask-free and land in [0, 1].
Saturated gates (frequency near 0 or near 1) are what a stable dropout
network is expected to develop.

The variance side: with dropout applied only to the inputs of one
layer, the pre-activation variance of neuron i under mask resampling
has the closed form sum_j w_ij^2 * sigma_j^2 * p(1-p), where sigma_j
is the (fixed) output of input neuron j and p the retention
probability. A Monte Carlo resampler validates the formula. Both sides
use unscaled 0/1 masks, not the inverted-dropout training scaling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .net import EVAL, DenseNet, forward

EVAL_CHUNK = 2048


@dataclass
class ActivationProfile:
    """Firing frequency per hidden neuron on one task's validation set.

    ``frequencies[k]`` holds hidden layer k+1 (1-based layer ids in the
    CSV schema: layer 1 is the first hidden layer).
    """

    task_id: int
    frequencies: list[np.ndarray]
    dataset_size: int


def firing_profile(net: DenseNet, task) -> ActivationProfile:
    """Fraction of validation examples on which each hidden neuron fires."""
    x, y = task.validation()
    if len(x) == 0:
        raise ValidationError("task has an empty validation set")
    counts = [np.zeros(net.layers[l].weights.shape[0], dtype=np.int64)
              for l in range(net.n_hidden)]
    for start in range(0, len(x), EVAL_CHUNK):
        trace = forward(net, x[start:start + EVAL_CHUNK], EVAL)
        for l in range(net.n_hidden):
            counts[l] += (trace.post_activations[l] > 0).sum(axis=0)
    freqs = [c / len(x) for c in counts]
    return ActivationProfile(task.id, freqs, len(x))


def profile_sparsity(profile: ActivationProfile, tau: float = 0.1, layer: int | None = None) -> float:
    """Fraction of neurons whose gate is saturated (f <= tau or f >= 1-tau).

    ``layer`` is the 1-based hidden layer; None pools all hidden layers.
    """
    if not 0.0 < tau < 0.5:
        raise ValidationError(f"tau must be in (0, 0.5), got {tau}")
    f = _layer_freqs(profile, layer)
    return float(np.mean((f <= tau) | (f >= 1.0 - tau)))


def profile_consistency(p1: ActivationProfile, p2: ActivationProfile):
    """(pearson, overlap) between two profiles of the same task.

    Pearson correlates the concatenated frequency vectors and is None
    when either vector is constant. Overlap binarizes at 0.5 and counts
    agreeing neurons.
    """
    if p1.task_id != p2.task_id:
        raise ValidationError(
            f"profiles measure different tasks ({p1.task_id} vs {p2.task_id})"
        )
    if [f.shape for f in p1.frequencies] != [f.shape for f in p2.frequencies]:
        raise ShapeError("profiles have different layer shapes")
    f1 = np.concatenate(p1.frequencies)
    f2 = np.concatenate(p2.frequencies)
    overlap = float(np.mean((f1 > 0.5) == (f2 > 0.5)))
    if np.ptp(f1) == 0 or np.ptp(f2) == 0:
        return None, overlap
    pearson = float(np.corrcoef(f1, f2)[0, 1])
    return pearson, overlap


def _layer_freqs(profile: ActivationProfile, layer: int | None) -> np.ndarray:
    if layer is None:
        return np.concatenate(profile.frequencies)
    if not 1 <= layer <= len(profile.frequencies):
        raise ValidationError(f"layer {layer} outside 1..{len(profile.frequencies)}")
    return profile.frequencies[layer - 1]


@dataclass
class VariancePrediction:
    """Closed-form pre-activation variance per neuron of the target layer."""

    values: np.ndarray


def _upstream_outputs(net: DenseNet, x: np.ndarray, layer: int) -> np.ndarray:
    """Eval-mode outputs of layer ``layer - 1`` for a single example."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if not 1 <= layer <= len(net.layers) - 1:
        raise ValidationError(f"layer must be in 1..{len(net.layers) - 1}, got {layer}")
    trace = forward(net, x, EVAL)
    return trace.post_activations[layer - 1][0].astype(np.float64)


def predicted_dropout_variance(net: DenseNet, x: np.ndarray, layer: int) -> VariancePrediction:
    """Variance of layer ``layer`` pre-activations when only its inputs are masked.

    Uses the nonnegative Bernoulli variance p(1-p); masks are the plain
    0/1 gates without the 1/p training rescale.
    """
    sigma = _upstream_outputs(net, x, layer)
    w = net.layers[layer].weights.astype(np.float64)
    p = net.keep_prob
    values = (w ** 2) @ (sigma ** 2) * (p * (1.0 - p))
    return VariancePrediction(values)


def monte_carlo_dropout_variance(net: DenseNet, x: np.ndarray, layer: int, n: int, rng) -> np.ndarray:
    """Empirical pre-activation variance over ``n`` resampled unscaled masks."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    sigma = _upstream_outputs(net, x, layer)
    w = net.layers[layer].weights.astype(np.float64)
    b = net.layers[layer].biases.astype(np.float64)
    p = net.keep_prob
    count = 0
    mean = np.zeros(w.shape[0])
    m2 = np.zeros(w.shape[0])
    chunk = 20000
    for start in range(0, n, chunk):
        c = min(chunk, n - start)
        masks = (rng.random((c, sigma.size)) < p).astype(np.float64)
        s = (masks * sigma) @ w.T + b
        # batched Welford merge keeps the accumulation single-pass
        c_mean = s.mean(axis=0)
        c_m2 = ((s - c_mean) ** 2).sum(axis=0)
        if count == 0:
            mean, m2, count = c_mean, c_m2, c
        else:
            delta = c_mean - mean
            total = count + c
            m2 = m2 + c_m2 + delta ** 2 * count * c / total
            mean = mean + delta * c / total
            count = total
    if count < 2:
        return np.zeros(w.shape[0])
    return m2 / (count - 1)


def profiles_to_csv(profiles: list[ActivationProfile]) -> str:
    """Long-form CSV: task_id, layer (1-based hidden), neuron_index, frequency."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["task_id", "layer", "neuron_index", "frequency"])
    for profile in profiles:
        for l, freqs in enumerate(profile.frequencies, start=1):
            for j, f in enumerate(freqs):
                writer.writerow([profile.task_id, l, j, f"{f:.6f}"])
    return buf.getvalue()


def profiles_from_csv(text: str) -> list[ActivationProfile]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["task_id", "layer", "neuron_index", "frequency"]:
        raise ValidationError(f"unexpected profile CSV header: {header}")
    acc: dict[int, dict[int, dict[int, float]]] = {}
    for task_id, layer, idx, freq in reader:
        acc.setdefault(int(task_id), {}).setdefault(int(layer), {})[int(idx)] = float(freq)
    profiles = []
    for task_id in sorted(acc):
        layers = []
        for l in sorted(acc[task_id]):
            entries = acc[task_id][l]
            layers.append(np.array([entries[j] for j in range(len(entries))]))
        profiles.append(ActivationProfile(task_id, layers, dataset_size=0))
    return profiles


def heatmap_matrix(profiles: list[ActivationProfile], layer: int) -> np.ndarray:
    """(tasks x neurons) frequency matrix for one hidden layer, rows in task order."""
    ordered = sorted(profiles, key=lambda p: p.task_id)
    return np.stack([_layer_freqs(p, layer) for p in ordered])
