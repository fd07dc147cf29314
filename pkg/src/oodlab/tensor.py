"""Dense float64 tensors with an explicit, single-use gradient tape.

Usage::

    tape = Tape()
    tape.watch(w, b)
    loss = ((x @ w + b).relu()).sum()
    backward(loss)
    w.grad, b.grad

An op is recorded when at least one input is registered on a live tape.
Broadcasting is limited to scalars and row vectors added to matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

LOG_CLAMP = 1e-12


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class TapeError(RuntimeError):
    pass


@dataclass
class _Node:
    tensor: "Tensor"
    parents: tuple[Optional[int], ...]
    # maps the output gradient to one gradient per input (None for constants)
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Tape:
    """Ordered record of operations. Nodes are appended after their parents."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def watch(self, *tensors: "Tensor") -> None:
        for t in tensors:
            self._append(t, (), None)

    def _append(self, t, parents, vjp) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        t.tape = self
        t.tape_id = len(self.nodes)
        t.grad = None
        self.nodes.append(_Node(t, parents, vjp))


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _live(t: "Tensor") -> Optional[Tape]:
    if t.tape is not None and not t.tape.consumed:
        return t.tape
    return None


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if a == b or a == () or b == ():
        return True
    # row bias: (n, k) with (k,) or (1, k)
    for big, small in ((a, b), (b, a)):
        if len(big) == 2 and (small == (big[1],) or small == (1, big[1])):
            return True
    return False


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=0, keepdims=True)


def _record(data: np.ndarray, inputs: Sequence["Tensor"], vjp) -> "Tensor":
    out = Tensor(data)
    tapes = {id(tp): tp for tp in (_live(t) for t in inputs) if tp is not None}
    if not tapes:
        return out
    if len(tapes) > 1:
        raise TapeError("inputs are registered on different tapes")
    tape = next(iter(tapes.values()))
    parents = tuple(t.tape_id if _live(t) is tape else None for t in inputs)
    tape._append(out, parents, vjp)
    return out


class Tensor:
    __slots__ = ("data", "grad", "tape", "tape_id")

    def __init__(self, data) -> None:
        self.data = np.array(data, dtype=np.float64, order="C")
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional[Tape] = None
        self.tape_id: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self.data!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # elementwise binary ops

    def _binary(self, other, fwd, da, db) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.data, other.data
        if not _broadcast_ok(a.shape, b.shape):
            raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}")

        def vjp(g):
            return _unbroadcast(da(g, a, b), a.shape), _unbroadcast(db(g, a, b), b.shape)

        return _record(fwd(a, b), (self, other), vjp)

    def __add__(self, other) -> "Tensor":
        return self._binary(other, np.add, lambda g, a, b: g * np.ones_like(b), lambda g, a, b: g * np.ones_like(a))

    def __sub__(self, other) -> "Tensor":
        return self._binary(other, np.subtract, lambda g, a, b: g * np.ones_like(b), lambda g, a, b: -g * np.ones_like(a))

    def __mul__(self, other) -> "Tensor":
        return self._binary(other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    def __radd__(self, other) -> "Tensor":
        return _as_tensor(other) + self

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __rmul__(self, other) -> "Tensor":
        return _as_tensor(other) * self

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # unary ops

    def relu(self) -> "Tensor":
        x = self.data
        return _record(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0),))

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return _record(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        """Natural log with the input clamped at ``LOG_CLAMP``."""
        x = self.data
        safe = np.maximum(x, LOG_CLAMP)
        return _record(np.log(safe), (self,), lambda g: (np.where(x > LOG_CLAMP, g / safe, 0.0),))

    def sqrt(self) -> "Tensor":
        y = np.sqrt(self.data)
        return _record(y, (self,), lambda g: (g * 0.5 / y,))

    # reductions

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        shape = self.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _record(self.data.sum(axis=axis), (self,), vjp)

    def mean(self) -> "Tensor":
        n = self.data.size
        shape = self.shape
        return _record(self.data.mean(), (self,), lambda g: (np.full(shape, g / n),))

    def max(self, axis: int = -1) -> "Tensor":
        """Max-reduce along ``axis``; gradient flows to the first maximal entry."""
        x = self.data
        idx = np.argmax(x, axis=axis)

        def vjp(g):
            mask = np.zeros_like(x)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            return (mask * np.expand_dims(g, axis),)

        return _record(np.take_along_axis(x, np.expand_dims(idx, axis), axis).squeeze(axis), (self,), vjp)

    def softmax(self) -> "Tensor":
        return softmax(self)

    def gather(self, index) -> "Tensor":
        """Pick ``self[i, index[i]]`` for every row ``i``."""
        x = self.data
        if x.ndim != 2:
            raise DimensionError("gather expects a matrix")
        index = np.asarray(index, dtype=np.int64)
        if index.shape != (x.shape[0],):
            raise DimensionError(f"need one index per row, got {index.shape} for {x.shape}")
        rows = np.arange(x.shape[0])

        def vjp(g):
            out = np.zeros_like(x)
            out[rows, index] = g
            return (out,)

        return _record(x[rows, index], (self,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    x, y = a.data, b.data
    return _record(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def softmax(logits) -> Tensor:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    logits = _as_tensor(logits)
    x = logits.data
    if x.shape[-1] < 1:
        raise DimensionError("softmax needs at least one class")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite values")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (logits,), vjp)


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every tensor recorded on ``root``'s tape."""
    if root.data.size != 1:
        raise TapeError(f"backward() needs a scalar root, got shape {root.shape}")
    tape = root.tape
    if tape is None:
        raise TapeError("root was not produced under a tape")
    if tape.consumed:
        raise TapeError("tape already consumed by backward()")
    tape.consumed = True

    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[root.tape_id] = np.ones_like(root.data)
    for i in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None:
            g = np.zeros_like(node.tensor.data)
        node.tensor.grad = g
        if node.vjp is None or i > root.tape_id:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pid is None:
                continue
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
