"""Small MLP with manual forward/backward passes.

The body maps inputs to feature vectors; the head is the linear scoring
layer the margin machinery attaches to. Backprop is written out by hand so
the extra feature-gradient pathway coming from the regularizer is explicit
rather than buried in an autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError
from .margin import LinearHead, score_batch
from .numkernel import RngStream, as_mat, matmul, seq_sum


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


@dataclass
class AffineLayer:
    W: np.ndarray  # out x in
    b: np.ndarray  # out
    activation: Activation


@dataclass
class Mlp:
    body: list[AffineLayer]
    head: LinearHead

    def __post_init__(self):
        prev = None
        for i, layer in enumerate(self.body):
            if layer.W.shape[0] != layer.b.shape[0]:
                raise ShapeError(f"layer {i}: bias/weight row mismatch")
            if prev is not None and layer.W.shape[1] != prev:
                raise ShapeError(
                    f"layer {i}: input dim {layer.W.shape[1]} != previous out {prev}"
                )
            prev = layer.W.shape[0]
        if prev is not None and self.head.feat_dim != prev:
            raise ShapeError(
                f"head input dim {self.head.feat_dim} != body output {prev}"
            )

    @property
    def in_dim(self) -> int:
        return self.body[0].W.shape[1] if self.body else self.head.feat_dim

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays, body first, weights before biases."""
        out: list[np.ndarray] = []
        for layer in self.body:
            out.append(layer.W)
            out.append(layer.b)
        out.append(self.head.W)
        out.append(self.head.b)
        return out


@dataclass
class ForwardTrace:
    """Everything backward() needs: inputs, pre-activations, activations."""

    layer_inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    acts: list[np.ndarray]
    features: np.ndarray
    scores: np.ndarray


@dataclass
class Gradients:
    body: list[tuple[np.ndarray, np.ndarray]]  # (dW, db) per body layer
    head_dW: np.ndarray
    head_db: np.ndarray


def init_mlp(dims, activations, seed: int) -> Mlp:
    """He-uniform init for relu layers, Glorot-uniform otherwise, zero biases.

    dims chains input through hidden widths to the class count; activations
    has one entry per body layer (len(dims) - 2 of them). Parameters are
    drawn row-major from a single seeded stream, so equal seeds give
    bit-identical models.
    """
    dims = tuple(int(d) for d in dims)
    activations = tuple(Activation(a) for a in activations)
    if len(dims) < 2:
        raise ShapeError(f"dims needs at least input and class count, got {dims}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"dims must be positive, got {dims}")
    if dims[-1] < 2:
        raise ShapeError(f"class count must be >= 2, got {dims[-1]}")
    if len(activations) != len(dims) - 2:
        raise ShapeError(
            f"need {len(dims) - 2} activations for dims {dims}, got {len(activations)}"
        )
    rng = RngStream(seed)

    def draw(rows: int, cols: int, bound: float) -> np.ndarray:
        w = np.empty((rows, cols))
        for r in range(rows):
            for c in range(cols):
                w[r, c] = rng.uniform(-bound, bound)
        return w

    body = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        if act == Activation.RELU:
            bound = math.sqrt(6.0 / fan_in)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        body.append(
            AffineLayer(W=draw(fan_out, fan_in, bound), b=np.zeros(fan_out), activation=act)
        )
    d, k = dims[-2], dims[-1]
    head = LinearHead(W=draw(k, d, math.sqrt(6.0 / (d + k))), b=np.zeros(k))
    return Mlp(body=body, head=head)


def _apply_activation(z: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.RELU:
        return np.maximum(z, 0.0)
    if act == Activation.TANH:
        return np.tanh(z)
    return z


def forward(model: Mlp, x) -> ForwardTrace:
    x = as_mat(x)
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model input {model.in_dim}")
    layer_inputs, pre_acts, acts = [], [], []
    cur = x
    for layer in model.body:
        layer_inputs.append(cur)
        z = matmul(cur, layer.W.T)
        z += layer.b
        pre_acts.append(z)
        cur = _apply_activation(z, layer.activation)
        acts.append(cur)
    scores = score_batch(model.head, cur)
    return ForwardTrace(
        layer_inputs=layer_inputs,
        pre_acts=pre_acts,
        acts=acts,
        features=cur,
        scores=scores,
    )


def trace_rows(trace: ForwardTrace, indices) -> ForwardTrace:
    """Row-sliced copy of a trace, for backprop on a selected sub-batch."""
    idx = np.asarray(indices, dtype=np.int64)
    return ForwardTrace(
        layer_inputs=[a[idx] for a in trace.layer_inputs],
        pre_acts=[a[idx] for a in trace.pre_acts],
        acts=[a[idx] for a in trace.acts],
        features=trace.features[idx],
        scores=trace.scores[idx],
    )


def backward_body(model: Mlp, trace: ForwardTrace, d_features) -> list[tuple]:
    """Propagate a feature gradient through the body; returns (dW, db) pairs.

    relu takes derivative 0 at exactly 0 (its kink), tanh uses the cached
    activation, identity passes through.
    """
    d_a = as_mat(d_features)
    grads: list[tuple] = []
    for i in range(len(model.body) - 1, -1, -1):
        layer = model.body[i]
        if layer.activation == Activation.RELU:
            dz = d_a * (trace.pre_acts[i] > 0.0)
        elif layer.activation == Activation.TANH:
            dz = d_a * (1.0 - trace.acts[i] * trace.acts[i])
        else:
            dz = d_a
        grads.append((matmul(dz.T, trace.layer_inputs[i]), np.asarray(seq_sum(dz, axis=0))))
        d_a = matmul(dz, layer.W)
    grads.reverse()
    return grads


def backward(model: Mlp, trace: ForwardTrace, d_scores, d_phi_extra=None) -> Gradients:
    """Chain rule through head and body.

    d_scores is the gradient at the score matrix; d_phi_extra (e.g. the
    regularizer's feature gradient) is added to the head-input gradient
    before it propagates into the body.
    """
    d_scores = as_mat(d_scores)
    if d_scores.shape != trace.scores.shape:
        raise ShapeError(
            f"d_scores shape {d_scores.shape} != scores {trace.scores.shape}"
        )
    head_dW = matmul(d_scores.T, trace.features)
    head_db = np.asarray(seq_sum(d_scores, axis=0))
    d_feat = matmul(d_scores, model.head.W)
    if d_phi_extra is not None:
        d_phi_extra = as_mat(d_phi_extra)
        if d_phi_extra.shape != d_feat.shape:
            raise ShapeError(
                f"d_phi_extra shape {d_phi_extra.shape} != features "
                f"{d_feat.shape}"
            )
        d_feat = d_feat + d_phi_extra
    return Gradients(
        body=backward_body(model, trace, d_feat),
        head_dW=head_dW,
        head_db=head_db,
    )


def sgd_step(model: Mlp, grads: Gradients, lr: float) -> Mlp:
    """In-place p <- p - lr * grad over every parameter."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(grads.body) != len(model.body):
        raise ShapeError("gradient/body layer count mismatch")
    for layer, (dW, db) in zip(model.body, grads.body):
        layer.W -= lr * dW
        layer.b -= lr * db
    model.head.W -= lr * grads.head_dW
    model.head.b -= lr * grads.head_db
    return model


def extract_features(model: Mlp, x) -> np.ndarray:
    """Penultimate-layer representation, one row per sample."""
    return forward(model, x).features


def body_sq_sum(model: Mlp) -> float:
    """Square sum over body parameters (per layer: weights then bias)."""
    total = 0.0
    for layer in model.body:
        total += seq_sum(layer.W * layer.W)
        total += seq_sum(layer.b * layer.b)
    return total
