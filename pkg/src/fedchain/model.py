"""Multilayer perceptron on flat parameter vectors.

Everything the federated pipeline moves around (weights, gradients, noisy
payloads) is a :class:`ParamVector`: one contiguous float64 array plus the
layer shapes needed to view it as ``(W, b)`` pairs. Hidden layers use ReLU and
the output layer is a softmax; the loss is mean cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, EmptyPartitionError, ShapeError


@dataclass(frozen=True)
class LayerShape:
    input_dim: int
    output_dim: int

    def __post_init__(self):
        if int(self.input_dim) < 1 or int(self.output_dim) < 1:
            raise ConfigurationError(f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}")

    @property
    def size(self) -> int:
        return self.input_dim * self.output_dim + self.output_dim


def shapes_from_dims(dims: Sequence[int]) -> tuple[LayerShape, ...]:
    """``[784, 64, 10]`` -> ``(784->64, 64->10)``."""
    if len(dims) < 2:
        raise ConfigurationError("an architecture needs at least input and output dims")
    return tuple(LayerShape(int(a), int(b)) for a, b in zip(dims[:-1], dims[1:]))


class ParamVector:
    """Flat parameter (or gradient) vector with its layer layout.

    Each layer occupies ``input_dim * output_dim`` row-major weights followed by
    ``output_dim`` biases.
    """

    __slots__ = ("values", "shapes")

    def __init__(self, values, shapes: Sequence[LayerShape]):
        shapes = tuple(shapes)
        if not shapes:
            raise ShapeError("a parameter vector needs at least one layer")
        values = np.array(values, dtype=np.float64).reshape(-1)
        expected = sum(s.size for s in shapes)
        if values.size != expected:
            raise ShapeError(f"expected {expected} values for layers {shapes}, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("parameter vector contains NaN or Inf")
        values.setflags(write=False)
        self.values = values
        self.shapes = shapes

    def __len__(self):
        return self.values.size

    def __repr__(self):
        dims = [self.shapes[0].input_dim] + [s.output_dim for s in self.shapes]
        return f"ParamVector(dims={dims}, n={self.values.size})"

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.values, other.values)

    __hash__ = None

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only ``(W, b)`` views, ``W`` of shape ``(input_dim, output_dim)``."""
        return _split(self.values, self.shapes)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.shapes == other.shapes

    def replace(self, values) -> "ParamVector":
        return ParamVector(values, self.shapes)

    @classmethod
    def from_layers(cls, layers, shapes) -> "ParamVector":
        return cls(_join(layers), shapes)


def _split(flat, shapes):
    out = []
    offset = 0
    for s in shapes:
        w = flat[offset : offset + s.input_dim * s.output_dim].reshape(s.input_dim, s.output_dim)
        offset += s.input_dim * s.output_dim
        out.append((w, flat[offset : offset + s.output_dim]))
        offset += s.output_dim
    return out


def _join(layers):
    return np.concatenate([np.concatenate([w.reshape(-1), b.reshape(-1)]) for w, b in layers])


@dataclass(frozen=True)
class Model:
    params: ParamVector
    activation: str = "relu-softmax"

    @property
    def shapes(self):
        return self.params.shapes

    @property
    def num_classes(self) -> int:
        return self.params.shapes[-1].output_dim

    @property
    def input_dim(self) -> int:
        return self.params.shapes[0].input_dim


@dataclass(frozen=True)
class TrainSpec:
    local_epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ConfigurationError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        # lr == 0 is allowed: it is the frozen-model limit used by fixed-point checks.
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be finite and >= 0")


def init_model(shapes: Sequence[LayerShape], seed: int) -> Model:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    shapes = tuple(shapes)
    if not shapes:
        raise ConfigurationError("architecture must contain at least one layer")
    for a, b in zip(shapes[:-1], shapes[1:]):
        if a.output_dim != b.input_dim:
            raise ConfigurationError(f"layer chain broken: {a.output_dim} != {b.input_dim}")
    rng = np.random.default_rng(seed)
    layers = []
    for s in shapes:
        limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
        layers.append((rng.uniform(-limit, limit, size=(s.input_dim, s.output_dim)), np.zeros(s.output_dim)))
    return Model(ParamVector.from_layers(layers, shapes))


def _as_inputs(model: Model, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, model.input_dim)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs must be [n x {model.input_dim}], got shape {x.shape}")
    return x


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(layers, x):
    activations = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    w, b = layers[-1]
    return activations, _softmax(h @ w + b)


def forward(model: Model, inputs) -> np.ndarray:
    """Class probabilities, one row per input."""
    x = _as_inputs(model, inputs)
    if x.shape[0] == 0:
        return np.zeros((0, model.num_classes))
    return _forward_cache(model.params.layers(), x)[1]


def _check_labels(model: Model, x, y):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ShapeError(f"labels must be a vector of length {x.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise ContractViolation(f"labels must lie in [0, {model.num_classes})")
    return y.astype(np.int64, copy=False)


def _backprop(layers, x, y):
    activations, probs = _forward_cache(layers, x)
    n = x.shape[0]
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        a = activations[i]
        grads[i] = (a.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ layers[i][0].T) * (a > 0)
    return grads


def gradient(model: Model, inputs, labels) -> ParamVector:
    """Gradient of mean cross-entropy over the batch w.r.t. every parameter."""
    x = _as_inputs(model, inputs)
    if x.shape[0] == 0:
        raise ContractViolation("gradient of an empty batch is undefined")
    y = _check_labels(model, x, labels)
    return ParamVector.from_layers(_backprop(model.params.layers(), x, y), model.shapes)


def loss(model: Model, inputs, labels) -> float:
    x = _as_inputs(model, inputs)
    y = _check_labels(model, x, labels)
    if x.shape[0] == 0:
        raise ContractViolation("loss of an empty batch is undefined")
    layers = model.params.layers()
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    z = h @ w + b
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(x.shape[0]), y].mean())


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled sample order for one epoch.

    Each epoch gets its own Philox counter stream keyed by ``(seed, epoch)``,
    so the order never depends on how many epochs ran before.
    """
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | ((int(epoch) & 0xFFFFFFFFFFFFFFFF) << 64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.permutation(n)


def train_local(model: Model, inputs, labels, spec: TrainSpec) -> Model:
    """Mini-batch SGD for ``spec.local_epochs`` epochs; the last batch may be short."""
    x = _as_inputs(model, inputs)
    if x.shape[0] == 0:
        raise EmptyPartitionError("cannot train on an empty partition")
    y = _check_labels(model, x, labels)
    if spec.learning_rate == 0:
        return model
    shapes = model.shapes
    flat = model.params.values.copy()
    n = x.shape[0]
    for epoch in range(spec.local_epochs):
        order = epoch_order(n, spec.seed, epoch)
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            g = _join(_backprop(_split(flat, shapes), x[idx], y[idx]))
            flat = flat - spec.learning_rate * g
    return Model(ParamVector(flat, shapes), model.activation)


def predict(model: Model, inputs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(forward(model, inputs), axis=1)


def evaluate(model: Model, inputs, labels) -> float:
    """Fraction of argmax-correct predictions."""
    x = _as_inputs(model, inputs)
    if x.shape[0] == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    y = _check_labels(model, x, labels)
    return float(np.mean(predict(model, x) == y))


def per_class_accuracy(model: Model, inputs, labels) -> np.ndarray:
    """Recall per class; classes absent from ``labels`` report 0."""
    x = _as_inputs(model, inputs)
    y = _check_labels(model, x, labels)
    pred = predict(model, x)
    out = np.zeros(model.num_classes)
    for c in range(model.num_classes):
        mask = y == c
        if mask.any():
            out[c] = float(np.mean(pred[mask] == c))
    return out
