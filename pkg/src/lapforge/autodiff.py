"""Small reverse-mode automatic differentiation engine over dense float64 arrays.

Operations are recorded on the active :class:`Tape` whenever at least one input
requires a gradient.  Outside a tape (or with constant inputs) the same
functions simply evaluate numpy expressions, which is what inference uses.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    >>> tape.backward(y)
    >>> float(x.grad)
    6.0
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "Perceptron",
    "matmul",
    "sparse_matmul",
    "concat",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "log",
    "clip",
    "sum",
    "mean",
    "max_reduce",
    "min_reduce",
    "l2_norm",
    "reshape",
]

DTYPE = np.float64


class AutodiffError(RuntimeError):
    pass


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations for one forward/backward episode.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded.  :meth:`backward` may run once per tape.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        if self._consumed:
            raise AutodiffError("tape already used for a backward pass")
        out._tape = self
        self._entries.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(.) into ``.grad`` of every leaf requiring it."""
        if loss.data.size != 1:
            raise AutodiffError(f"backward needs a scalar root, got shape {loss.shape}")
        if self._consumed:
            raise AutodiffError("backward already ran on this tape")
        if loss._tape is not self:
            if loss.requires_grad and loss._tape is None:
                # a leaf parameter used directly as the loss
                loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
                self._consumed = True
                return
            raise AutodiffError("loss was not produced on this tape (backward without forward?)")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is self:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                else:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
        self._entries.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(out, inputs, vjp)
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- primitives -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _make(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def sparse_matmul(m: sp.spmatrix, x) -> Tensor:
    """Product of a constant sparse matrix with a dense 2-D tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ValueError(f"sparse_matmul shape mismatch: {m.shape} @ {x.shape}")
    return _make(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(m.T @ g),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    data = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, ts, vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product; a row or column vector operand is broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    return _make(
        A * B,
        (a, b),
        lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)),
    )


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    A = a.data
    return _make(np.log(A), (a,), lambda g: (g / A,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), vjp)


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


def _extremum(a, axis: int, pick: Callable) -> Tensor:
    a = _as_tensor(a)
    idx = pick(a.data, axis=axis)  # first index on ties
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(data, (a,), vjp)


def max_reduce(a, axis: int = 0) -> Tensor:
    return _extremum(a, axis, np.argmax)


def min_reduce(a, axis: int = 0) -> Tensor:
    return _extremum(a, axis, np.argmin)


def l2_norm(a, axis: int | None = None) -> Tensor:
    """Euclidean norm; the gradient at a zero vector is taken as zero."""
    a = _as_tensor(a)
    A = a.data
    norm = np.sqrt((A * A).sum(axis=axis))

    def vjp(g):
        safe = np.where(norm > 0, norm, 1.0)
        coef = np.where(norm > 0, g / safe, 0.0)
        if axis is not None:
            coef = np.expand_dims(coef, axis)
        return (A * coef,)

    return _make(norm, (a,), vjp)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# --- perceptron -----------------------------------------------------------

_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "identity": lambda x: x}


class Perceptron:
    """Stack of affine layers, each followed by an activation.

    ``sizes`` lists layer widths including the input, e.g. ``[48, 32, 16]``;
    ``activations`` has one entry per affine layer.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator | None = None):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{k}.weight", w))
            out.append((f"layer{k}.bias", b))
        return out

    def __call__(self, x) -> Tensor:
        x = _as_tensor(x)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"perceptron expects {self.sizes[0]} inputs, got {x.shape[-1]}")
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = _ACTIVATIONS[act](add(matmul(h, w), b))
        return h
