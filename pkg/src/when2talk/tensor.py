"""Dense tensors and a reverse-mode autodiff tape on top of numpy.

Every differentiable operation records its output on the innermost active
:class:`Tape`; append order is topological order, so :func:`backward` simply
walks the tape in reverse and accumulates gradients into the leaves.
Tensors are treated as immutable after creation (the optimizer is the only
code that rewrites parameter data, between passes).
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

EPS_BCE = 1e-7


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class IndexRangeError(IndexError):
    """Raised when a lookup index is outside its table."""


_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tape:
    """Append-only record of op outputs for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self._backward = None
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; numbers are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        tape = _active_tape()
        if tape is not None:
            out._inputs = inputs
            out._backward = backward
            out._tape = tape
            tape.nodes.append(out)
    return out


def backward(loss: Tensor) -> None:
    """Reverse-traverse the tape of ``loss``, filling ``.grad`` on leaves.

    Gradient accumulators are zeroed first; shared inputs receive the sum of
    all path gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise RuntimeError("loss was not recorded on an active tape")
    for node in tape.nodes:
        node.grad = None
        for t in node._inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        for t, g in zip(node._inputs, node._backward(node.grad)):
            if g is None or not t.requires_grad:
                continue
            g = _unbroadcast(np.asarray(g), t.data.shape)
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        return np.outer(g, b.data), a.data.T @ g

    return _record(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    return _record(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _record(np.where(m, a.data, 0.0), (a,), lambda g: (g * m,))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    m = a.data > 0
    return _record(np.where(m, a.data, alpha * a.data), (a,),
                   lambda g: (np.where(m, g, alpha * g),))


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by op name; binary kinds require a second operand."""
    unary = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    binary = {"add": add, "mul": mul, "sub": sub}
    if kind in unary:
        return unary[kind](a)
    if kind in binary:
        if b is None:
            raise ValueError(f"elementwise '{kind}' needs two operands")
        if a.shape != b.shape:
            raise ShapeError(f"elementwise '{kind}': shapes {a.shape} != {b.shape}")
        return binary[kind](a, b)
    raise ValueError(f"unknown elementwise kind '{kind}'")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ValueError("concat of an empty list")
    ax = axis if axis >= 0 else parts[0].ndim + axis
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {[p.shape for p in parts]} differ off axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=ax))

    return _record(out, tuple(parts), bw)


def mean_rows(rows: Sequence[Tensor], dim: int | None = None) -> Tensor:
    """Mean of equal-dimension vectors; empty input yields the zero vector."""
    rows = list(rows)
    if not rows:
        if dim is None:
            raise ValueError("mean_rows on an empty set needs an explicit dim")
        return zeros((dim,))
    d = rows[0].shape
    for r in rows[1:]:
        if r.shape != d:
            raise ShapeError(f"mean_rows: mixed dimensions {d} vs {r.shape}")
    n = len(rows)
    out = sum(r.data for r in rows) / n
    return _record(out, tuple(rows), lambda g: tuple(g / n for _ in rows))


def gather_rows(table: Tensor, index) -> Tensor:
    """Row lookup; the backward pass scatter-adds into the selected rows only."""
    idx = np.asarray(index)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexRangeError(f"gather_rows: index out of range for table with {n_rows} rows")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(s, (a,), bw)


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax within groups given by ``segments`` (e.g. edges per target node)."""
    if scores.ndim != 1:
        raise ShapeError("segment_softmax expects a flat score vector")
    seg = np.asarray(segments)
    x = scores.data
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, seg, x)
    e = np.exp(x - mx[seg])
    tot = np.zeros(num_segments, dtype=e.dtype)
    np.add.at(tot, seg, e)
    a = e / tot[seg]

    def bw(g):
        dot = np.zeros(num_segments, dtype=a.dtype)
        np.add.at(dot, seg, a * g)
        return (a * (g - dot[seg]),)

    return _record(a, (scores,), bw)


def softmax_xent(logits: Tensor, target: int) -> Tensor:
    """Cross-entropy of ``logits`` against a single target index."""
    if logits.ndim != 1:
        raise ShapeError("softmax_xent expects a flat logit vector")
    v = logits.shape[0]
    if not 0 <= target < v:
        raise IndexRangeError(f"softmax_xent: target {target} out of range for {v} classes")
    x = logits.data
    m = x.max()
    e = np.exp(x - m)
    p = e / e.sum()
    loss = -(np.log(p[target]))

    def bw(g):
        grad = p.copy()
        grad[target] -= 1.0
        return (grad * g,)

    return _record(np.asarray(loss), (logits,), bw)


def xent_rows(logits: Tensor, targets, mask=None) -> Tensor:
    """Sum of per-row cross-entropies, optionally masked (0 rows dropped)."""
    if logits.ndim != 2:
        raise ShapeError("xent_rows expects a (rows, classes) matrix")
    n, v = logits.shape
    tgt = np.asarray(targets)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= v):
        raise IndexRangeError(f"xent_rows: target out of range for {v} classes")
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=logits.dtype)
    x = logits.data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = -(np.log(p[rows, tgt]) * m).sum()

    def bw(g):
        grad = p.copy()
        grad[rows, tgt] -= 1.0
        return (grad * (m * g)[:, None],)

    return _record(np.asarray(loss), (logits,), bw)


def bce(p: Tensor, label) -> Tensor:
    """Elementwise binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(label, dtype=p.dtype)
    ph = np.clip(p.data, EPS_BCE, 1.0 - EPS_BCE)
    loss = -(y * np.log(ph) + (1.0 - y) * np.log(1.0 - ph))
    inside = (p.data > EPS_BCE) & (p.data < 1.0 - EPS_BCE)

    def bw(g):
        return (g * inside * (ph - y) / (ph * (1.0 - ph)),)

    return _record(loss, (p,), bw)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-rate); eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


def sum_all(x: Tensor) -> Tensor:
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def named_grads(named: Iterable[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in named}
