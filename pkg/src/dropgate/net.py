"""Dense feed-forward network with manual backprop and Bernoulli dropout gating.

The network is a plain MLP: ReLU hidden layers, linear output layer
(logits), softmax cross-entropy loss, SGD with classical momentum.
Dropout uses the inverted convention: at train time each hidden neuron
survives with probability ``keep_prob`` and surviving activations are
scaled by ``1/keep_prob``, so evaluation needs no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError

TRAIN = "train"
EVAL = "eval"


@dataclass
class LayerParams:
    """One affine layer: ``weights`` is (out, in), ``biases`` is (out,)."""

    weights: np.ndarray
    biases: np.ndarray
    activation_kind: str  # "relu" | "linear"

    def validate(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got {self.weights.ndim}-D")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.biases.shape} != weight rows {self.weights.shape[0]}"
            )
        if self.activation_kind not in ("relu", "linear"):
            raise ValidationError(f"unknown activation {self.activation_kind!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValidationError("non-finite layer parameters")


@dataclass
class DenseNet:
    """MLP parameters plus the dropout retention probability.

    ``keep_prob`` is the probability that a hidden neuron is NOT deleted
    at train time; 1.0 disables dropout. Dropout never touches the input
    or the output layer.
    """

    layers: list[LayerParams]
    keep_prob: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValidationError(f"keep_prob must be in [0,1], got {self.keep_prob}")

    @property
    def architecture(self) -> list[int]:
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def validate(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeError("consecutive layer dimensions incompatible")
        for i, layer in enumerate(self.layers):
            layer.validate()
            expect = "linear" if i == len(self.layers) - 1 else "relu"
            if layer.activation_kind != expect:
                raise ValidationError(f"layer {i} must be {expect}")

    def copy(self) -> "DenseNet":
        return DenseNet(
            [LayerParams(l.weights.copy(), l.biases.copy(), l.activation_kind) for l in self.layers],
            self.keep_prob,
        )

    @classmethod
    def init(cls, architecture, keep_prob, rng, dtype=np.float32) -> "DenseNet":
        """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(architecture, architecture[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
            b = np.zeros(fan_out, dtype=dtype)
            kind = "linear" if i == len(architecture) - 2 else "relu"
            layers.append(LayerParams(w, b, kind))
        return cls(layers, keep_prob)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward pass.

    ``pre_activations[l]`` and ``post_activations[l]`` are (batch, width)
    for layer ``l``; ``post = max(0, pre)`` on ReLU layers and ``post =
    pre`` on the linear output layer. ``dropout_masks[l]`` holds the 0/1
    gate drawn for hidden layer ``l`` (all ones in eval mode). Masks are
    stored unscaled; the ``1/keep_prob`` factor is applied when the gated
    output feeds the next layer.
    """

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    post_activations: list[np.ndarray]
    dropout_masks: list[np.ndarray]
    logits: np.ndarray
    mode: str
    keep_prob: float

    def gated_output(self, l: int) -> np.ndarray:
        """Output of hidden layer ``l`` as seen by layer ``l+1``."""
        scale = _mask_scale(self.mode, self.keep_prob)
        return self.post_activations[l] * self.dropout_masks[l] * scale


def _mask_scale(mode: str, keep_prob: float) -> float:
    if mode == EVAL or keep_prob == 1.0:
        return 1.0
    if keep_prob == 0.0:
        return 0.0  # every unit dropped; output is zero regardless
    return 1.0 / keep_prob


def forward(net: DenseNet, batch: np.ndarray, mode: str = EVAL, rng=None, masks=None) -> ForwardTrace:
    """Run the network on ``batch`` (rows are examples).

    In train mode with ``keep_prob < 1`` each hidden activation is
    multiplied by a fresh Bernoulli(keep_prob) mask and rescaled by
    ``1/keep_prob``. ``masks`` (a list with one 0/1 array per hidden
    layer) overrides the random draw, which gradient checks use to pin
    the gates.
    """
    if mode not in (TRAIN, EVAL):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != net.layers[0].weights.shape[1]:
        raise ShapeError(
            f"batch shape {batch.shape} incompatible with input width "
            f"{net.layers[0].weights.shape[1]}"
        )
    if not np.isfinite(batch).all():
        raise ValidationError("non-finite values in input batch")

    p = net.keep_prob
    draw_masks = mode == TRAIN and masks is None and p < 1.0
    if draw_masks and rng is None:
        raise ValidationError("train-mode forward with keep_prob < 1 needs an rng")

    scale = _mask_scale(mode, p)
    pre, post, used_masks = [], [], []
    a = batch
    for l, layer in enumerate(net.layers):
        s = a @ layer.weights.T + layer.biases
        pre.append(s)
        if layer.activation_kind == "relu":
            h = np.maximum(s, 0.0)
        else:
            h = s
        post.append(h)
        if l < net.n_hidden:  # dropout gates hidden layers only
            if mode == TRAIN and masks is not None:
                m = np.asarray(masks[l], dtype=h.dtype)
                if m.shape != h.shape:
                    raise ShapeError(f"mask {l} shape {m.shape} != activation {h.shape}")
            elif draw_masks:
                m = (rng.random(h.shape) < p).astype(h.dtype)
            else:
                m = np.ones_like(h)
            used_masks.append(m)
            a = h * m * scale if scale != 1.0 else h * m
        else:
            a = h
    return ForwardTrace(batch, pre, post, used_masks, pre[-1], mode, p)


@dataclass
class Gradients:
    """Per-layer weight/bias gradients, shapes mirroring the network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "Gradients":
        return cls(
            [np.zeros_like(l.weights) for l in net.layers],
            [np.zeros_like(l.biases) for l in net.layers],
        )

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, net: DenseNet, vec: np.ndarray) -> "Gradients":
        ws, bs, off = [], [], 0
        for layer in net.layers:
            n = layer.weights.size
            ws.append(vec[off:off + n].reshape(layer.weights.shape).astype(layer.weights.dtype))
            off += n
            n = layer.biases.size
            bs.append(vec[off:off + n].astype(layer.biases.dtype))
            off += n
        if off != vec.size:
            raise ShapeError(f"flat vector length {vec.size} != parameter count {off}")
        return cls(ws, bs)


def flat_dim(net: DenseNet) -> int:
    return sum(l.weights.size + l.biases.size for l in net.layers)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def backward_from_dlogits(net: DenseNet, trace: ForwardTrace, dlogits: np.ndarray) -> Gradients:
    """Backprop an arbitrary logit gradient through the traced forward pass.

    Replays the dropout masks recorded in ``trace``, so units gated out
    in the forward pass propagate zero gradient.
    """
    scale = _mask_scale(trace.mode, trace.keep_prob)
    grads_w = [None] * len(net.layers)
    grads_b = [None] * len(net.layers)
    delta = dlogits  # gradient wrt the current layer's pre-activation
    for l in range(len(net.layers) - 1, -1, -1):
        a_in = trace.inputs if l == 0 else trace.gated_output(l - 1)
        grads_w[l] = delta.T @ a_in
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            da = delta @ net.layers[l].weights
            m = trace.dropout_masks[l - 1]
            da = da * m * scale if scale != 1.0 else da * m
            delta = da * (trace.pre_activations[l - 1] > 0)
    return Gradients(grads_w, grads_b)


def loss_and_backward(net: DenseNet, trace: ForwardTrace, labels: np.ndarray):
    """Mean softmax cross-entropy over the batch plus its gradients."""
    labels = np.asarray(labels)
    n_classes = net.layers[-1].weights.shape[0]
    if labels.ndim != 1 or labels.shape[0] != trace.inputs.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} != batch size {trace.inputs.shape[0]}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(f"labels must be in [0, {n_classes})")

    b = trace.inputs.shape[0]
    probs = softmax(trace.logits.astype(np.float64))
    loss = float(-np.mean(np.log(probs[np.arange(b), labels] + 1e-300)))

    dlogits = probs.astype(net.dtype)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, backward_from_dlogits(net, trace, dlogits)


@dataclass
class OptimizerState:
    """Classical momentum: v <- momentum*v + g; theta <- theta - lr*v."""

    lr: float
    momentum: float
    velocity_w: list[np.ndarray] = field(default_factory=list)
    velocity_b: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        # lr == 0 is allowed: a zero step still accumulates velocity.
        if self.lr < 0:
            raise ValidationError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0,1), got {self.momentum}")

    @classmethod
    def zeros(cls, net: DenseNet, lr: float, momentum: float) -> "OptimizerState":
        return cls(
            lr,
            momentum,
            [np.zeros_like(l.weights) for l in net.layers],
            [np.zeros_like(l.biases) for l in net.layers],
        )


def sgd_momentum_step(net: DenseNet, grads: Gradients, state: OptimizerState):
    """One in-place momentum step; returns the (mutated) net and state."""
    if len(grads.weights) != len(net.layers):
        raise ShapeError("gradient layer count != network layer count")
    for l, layer in enumerate(net.layers):
        if grads.weights[l].shape != layer.weights.shape:
            raise ShapeError(
                f"gradient shape {grads.weights[l].shape} != weights {layer.weights.shape}"
            )
        vw, vb = state.velocity_w[l], state.velocity_b[l]
        vw *= state.momentum
        vw += grads.weights[l]
        vb *= state.momentum
        vb += grads.biases[l]
        layer.weights -= state.lr * vw
        layer.biases -= state.lr * vb
    return net, state


def decay_lr(state: OptimizerState, factor: float) -> OptimizerState:
    """Multiply the learning rate by ``factor`` (0 < factor <= 1)."""
    if not 0.0 < factor <= 1.0:
        raise ValidationError(f"decay factor must be in (0,1], got {factor}")
    state.lr *= factor
    return state
