"""MLP classifier, SGD and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .rng import Stream, make_rng
from .tensor import DimensionError, Tape, Tensor, TapeError, softmax

WEIGHTS_HEADER = "OODLAB-WEIGHTS v1"


class WeightsFormatError(ValueError):
    pass


class NonFiniteParams(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


@dataclass(frozen=True)
class ModelParams:
    """Per-layer weights ``W[i]`` (fan_in x fan_out) and biases ``b[i]``."""

    arch: Architecture
    weights: tuple[Tensor, ...]
    biases: tuple[Tensor, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.arch.layer_dims) or len(self.biases) != len(self.weights):
            raise DimensionError("layer count does not match architecture")
        for (fi, fo), w, b in zip(self.arch.layer_dims, self.weights, self.biases):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise DimensionError(f"layer shapes {w.shape}/{b.shape} != ({fi}, {fo})")
            if not (np.all(np.isfinite(w.data)) and np.all(np.isfinite(b.data))):
                raise NonFiniteParams("parameters must be finite")

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def last_layer(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weights[-1].data, self.biases[-1].data

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: Sequence[np.ndarray]) -> "ModelParams":
        arrays = list(arrays)
        return cls(arch, tuple(Tensor(a) for a in arrays[0::2]), tuple(Tensor(a) for a in arrays[1::2]))


@dataclass
class ForwardOut:
    features: Tensor
    logits: Tensor
    probs: Tensor


def init(arch: Architecture, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(seed, Stream.INIT)
    ws, bs = [], []
    for fan_in, fan_out in arch.layer_dims:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
        bs.append(Tensor(np.zeros(fan_out)))
    return ModelParams(arch, tuple(ws), tuple(bs))


def forward(params: ModelParams, x) -> ForwardOut:
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.data.ndim != 2 or h.shape[1] != params.arch.input_dim:
        raise DimensionError(f"expected input (n, {params.arch.input_dim}), got {h.shape}")
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = (h @ w + b).relu()
    logits = h @ params.weights[-1] + params.biases[-1]
    return ForwardOut(features=h, logits=logits, probs=softmax(logits))


def predict_arrays(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Untracked forward pass returning ``(features, logits, probs)`` as arrays."""
    out = forward(params, np.asarray(x, dtype=np.float64))
    return out.features.data, out.logits.data, out.probs.data


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    if total_epochs <= 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def sgd_step(params: ModelParams, grads: Sequence[Optional[np.ndarray]], lr: float) -> ModelParams:
    """Plain ``p - lr * g`` over ``params.parameters()`` order; returns fresh params."""
    current = params.parameters()
    if len(grads) != len(current) or any(g is None for g in grads):
        raise TapeError("missing gradients; run backward() first")
    return ModelParams.from_arrays(params.arch, [p.data - lr * g for p, g in zip(current, grads)])


@dataclass
class SGD:
    """SGD with optional momentum and L2 weight decay (both off by default)."""

    momentum: float = 0.0
    weight_decay: float = 0.0
    _velocity: Optional[list[np.ndarray]] = field(default=None, repr=False)

    def step(self, params: ModelParams, lr: float) -> ModelParams:
        ps = params.parameters()
        grads = [p.grad for p in ps]
        if any(g is None for g in grads):
            raise TapeError("missing gradients; run backward() first")
        if self.weight_decay:
            grads = [g + self.weight_decay * p.data for g, p in zip(grads, ps)]
        if self.momentum:
            if self._velocity is None:
                self._velocity = [np.zeros_like(g) for g in grads]
            self._velocity = [self.momentum * v + g for v, g in zip(self._velocity, grads)]
            grads = self._velocity
        return sgd_step(params, grads, lr)


def track(params: ModelParams) -> Tape:
    """Start a fresh tape with every parameter of ``params`` registered."""
    tape = Tape()
    tape.watch(*params.parameters())
    return tape


def save_weights(params: ModelParams, path) -> None:
    Path(path).write_text(dumps_weights(params))


def dumps_weights(params: ModelParams) -> str:
    lines = [WEIGHTS_HEADER]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        rows, cols = w.shape
        lines.append(f"layer {i} W {rows} {cols}")
        lines += [" ".join(format(v, ".17g") for v in row) for row in w.data]
        lines.append(f"layer {i} b {cols}")
        lines.append(" ".join(format(v, ".17g") for v in b.data))
    return "\n".join(lines) + "\n"


def load_weights(path) -> ModelParams:
    return loads_weights(Path(path).read_text())


def loads_weights(text: str) -> ModelParams:
    lines = text.splitlines()
    if not lines or lines[0].strip() != WEIGHTS_HEADER:
        raise WeightsFormatError(f"missing {WEIGHTS_HEADER!r} header")
    pos = 1
    arrays = []

    def floats(line: str, expect: int) -> list[float]:
        vals = [float(v) for v in line.split()]
        if len(vals) != expect:
            raise WeightsFormatError(f"line {pos + 1}: expected {expect} values, got {len(vals)}")
        return vals

    layer = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].split()
        if len(head) != 5 or head[:3] != ["layer", str(layer), "W"]:
            raise WeightsFormatError(f"line {pos + 1}: expected 'layer {layer} W <rows> <cols>'")
        rows, cols = int(head[3]), int(head[4])
        pos += 1
        if pos + rows + 1 >= len(lines) + 1:
            raise WeightsFormatError("truncated weights file")
        w = []
        for _ in range(rows):
            w.append(floats(lines[pos], cols))
            pos += 1
        if pos >= len(lines) or lines[pos].split() != ["layer", str(layer), "b", str(cols)]:
            raise WeightsFormatError(f"line {pos + 1}: expected 'layer {layer} b {cols}'")
        pos += 1
        if pos >= len(lines):
            raise WeightsFormatError("truncated weights file")
        b = floats(lines[pos], cols)
        pos += 1
        arrays += [np.array(w, dtype=np.float64).reshape(rows, cols), np.array(b, dtype=np.float64)]
        layer += 1
    if not arrays:
        raise WeightsFormatError("no layers")
    dims = [arrays[0].shape[0]] + [a.shape[1] for a in arrays[0::2]]
    arch = Architecture(dims[0], tuple(dims[1:-1]), dims[-1])
    return ModelParams.from_arrays(arch, arrays)
