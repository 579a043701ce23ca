"""Fully connected embedding network with hand-written backpropagation.

Hidden layers share one activation (relu or tanh); the output layer is
linear and optionally L2-normalised. Inputs may be a single vector or a
batch of row vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, NumericalError, ParseError, StateError

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = "densemetric-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EmbeddingModel:
    input_dim: int
    output_dim: int
    hidden_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    normalize_output: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInput(f"activation must be one of {ACTIVATIONS}")
        dims = self.dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidInput("layer count does not match dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InvalidInput(f"layer {i} has shape {W.shape}/{b.shape}, "
                                   f"expected {(dims[i + 1], dims[i])}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {i} has non-finite parameters")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.input_dim, self.output_dim, list(self.hidden_dims),
            [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.activation, self.normalize_output,
        )

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __call__(self, X):
        return forward(self, X)


@dataclass
class GradientBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    accumulation_count: int = 0

    @classmethod
    def for_model(cls, model: EmbeddingModel) -> "GradientBuffer":
        return cls([np.zeros_like(W) for W in model.weights],
                   [np.zeros_like(b) for b in model.biases])

    def reset(self) -> None:
        for a in self.weights + self.biases:
            a.fill(0.0)
        self.accumulation_count = 0


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    decay_factor: float = 0.5
    min_learning_rate: float = 1e-7
    momentum: float = 0.9
    velocity: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.min_learning_rate > 0:
            raise InvalidInput("learning rates must be positive")
        if not 0 < self.decay_factor <= 1:
            raise InvalidInput("decay_factor must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise InvalidInput("momentum must lie in [0, 1)")
        self.learning_rate = max(self.learning_rate, self.min_learning_rate)

    def decay(self) -> float:
        self.learning_rate = max(self.min_learning_rate, self.learning_rate * self.decay_factor)
        return self.learning_rate


@dataclass
class ForwardRecord:
    """Per-layer activations kept for a later :func:`backward` call."""
    inputs: list[np.ndarray]       # input to each layer
    pre_activations: list[np.ndarray]
    raw_output: np.ndarray          # output layer before normalisation
    output: np.ndarray
    single: bool


def init_model(seed: int, dims, activation="relu", normalize_output=False) -> EmbeddingModel:
    """Random model with weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero biases.

    ``dims`` is ``[input_dim, *hidden_dims, output_dim]``.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise InvalidInput("dims needs at least input and output sizes")
    if any(d < 1 for d in dims):
        raise InvalidInput("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(dims[0], dims[-1], dims[1:-1], weights, biases,
                          activation, normalize_output)


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(kind, z, a):
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a * a


def forward_pass(model: EmbeddingModel, x) -> tuple[np.ndarray, ForwardRecord]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidInput(f"expected input of dim {model.input_dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("input contains non-finite values")
    inputs, pres = [], []
    h = X
    last = model.n_layers - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ W.T + b
        pres.append(z)
        h = z if i == last else _act(model.activation, z)
    raw = h
    if not np.all(np.isfinite(raw)):
        raise NumericalError("non-finite activation in forward pass")
    if model.normalize_output:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise NumericalError("cannot normalise a zero embedding")
        out = raw / norms
    else:
        out = raw
    record = ForwardRecord(inputs, pres, raw, out, single)
    return (out[0] if single else out), record


def forward(model: EmbeddingModel, x) -> np.ndarray:
    return forward_pass(model, x)[0]


def backward(model: EmbeddingModel, record: ForwardRecord | None, upstream_grad,
             buffer: GradientBuffer, count: int = 1) -> np.ndarray:
    """Accumulate dL/dtheta into ``buffer`` and return dL/dx.

    ``upstream_grad`` is dL/d(embedding) for the rows recorded in ``record``.
    ``count`` is added to ``buffer.accumulation_count`` (the number of loss
    terms whose gradient this call carries). Model parameters are untouched.
    """
    if record is None:
        raise StateError("backward called without a forward record")
    G = np.asarray(upstream_grad, dtype=float)
    if record.single:
        G = G[None, :] if G.ndim == 1 else G
    if G.shape != record.output.shape:
        raise InvalidInput(f"upstream gradient shape {G.shape} != output {record.output.shape}")
    if model.normalize_output:
        y = record.output
        norms = np.linalg.norm(record.raw_output, axis=1, keepdims=True)
        G = (G - y * (G * y).sum(axis=1, keepdims=True)) / norms
    last = model.n_layers - 1
    for i in range(last, -1, -1):
        z = record.pre_activations[i]
        if i != last:
            a = record.inputs[i + 1]
            G = G * _act_grad(model.activation, z, a)
        buffer.weights[i] += G.T @ record.inputs[i]
        buffer.biases[i] += G.sum(axis=0)
        G = G @ model.weights[i]
    buffer.accumulation_count += count
    return G[0] if record.single else G


def apply_gradients(model: EmbeddingModel, buffer: GradientBuffer, opt: OptimizerState) -> None:
    """Momentum step on the mean accumulated gradient, then reset the buffer."""
    if buffer.accumulation_count <= 0:
        raise StateError("gradient buffer is empty")
    n = buffer.accumulation_count
    grads = []
    for gW, gb in zip(buffer.weights, buffer.biases):
        grads += [gW / n, gb / n]
    params = model.parameters()
    if opt.velocity is None:
        opt.velocity = [np.zeros_like(p) for p in params]
    for p, v, g in zip(params, opt.velocity, grads):
        v *= opt.momentum
        v += g
        p -= opt.learning_rate * v
    buffer.reset()


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Write the textual checkpoint format described in docs/formats.md."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"input_dim={model.input_dim}",
        f"hidden_dims={','.join(str(d) for d in model.hidden_dims)}",
        f"output_dim={model.output_dim}",
        f"activation={model.activation}",
        f"normalize_output={'true' if model.normalize_output else 'false'}",
    ]
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"weight {i} {W.shape[0]} {W.shape[1]}")
        lines += [" ".join(repr(float(v)) for v in row) for row in W]
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> EmbeddingModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        return _parse_checkpoint(text)
    except ParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from None


def _parse_checkpoint(text: list[str]) -> EmbeddingModel:
    if not text or not text[0].startswith(CHECKPOINT_MAGIC):
        raise ParseError("not a densemetric checkpoint", 1)
    version = int(text[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 1)
    header = {}
    pos = 1
    while pos < len(text) and "=" in text[pos]:
        key, _, value = text[pos].partition("=")
        header[key] = value
        pos += 1
    try:
        hidden = [int(d) for d in header["hidden_dims"].split(",") if d]
        in_dim, out_dim = int(header["input_dim"]), int(header["output_dim"])
        activation = header["activation"]
        normalize = header["normalize_output"] == "true"
    except KeyError as exc:
        raise ParseError(f"missing header field {exc}", pos) from None

    def rows(n, width):
        nonlocal pos
        block = []
        for _ in range(n):
            pos += 1
            vals = [float(v) for v in text[pos - 1].split()] if pos <= len(text) else []
            if len(vals) != width:
                raise ParseError(f"expected {width} values", pos)
            block.append(vals)
        return np.array(block, dtype=float).reshape(n, width)

    weights, biases = [], []
    dims = [in_dim, *hidden, out_dim]
    for i in range(len(dims) - 1):
        pos += 1
        tag = text[pos - 1].split() if pos <= len(text) else []
        if tag[:2] != ["weight", str(i)]:
            raise ParseError(f"expected weight block {i}", pos)
        weights.append(rows(int(tag[2]), int(tag[3])))
        pos += 1
        tag = text[pos - 1].split() if pos <= len(text) else []
        if tag[:2] != ["bias", str(i)]:
            raise ParseError(f"expected bias block {i}", pos)
        biases.append(rows(1, int(tag[2]))[0])
    return EmbeddingModel(in_dim, out_dim, hidden, weights, biases, activation, normalize)
