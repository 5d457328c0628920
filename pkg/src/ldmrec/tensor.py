"""Dense float64 matrices with tape-based reverse-mode differentiation.

This is deliberately a minimal engine: it covers exactly the operation set
the conditional denoiser needs (matrix products, row-broadcast bias adds,
pointwise nonlinearities, row gather/concat, scalar reductions) and nothing
more. Everything is 2-D float64; vectors are 1 x n rows, scalars 1 x 1.
Gradients are produced by replaying a tape of recorded primitives in exact
reverse order.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericsError, TapeError

_local = threading.local()


def _tape_stack() -> list["GradTape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A 2-D float64 matrix, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor initialized with non-finite entries")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


class GradTape:
    """Ordered record of primitive ops, replayed backwards for adjoints.

    A tape and the intermediate tensors built under it belong to a single
    worker; parameters may be shared read-only across tapes. One backward
    pass per forward pass: a second backward on the same tape is rejected.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("gradient tapes must be exited in LIFO order")
        stack.pop()

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((out, inputs, backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Adjoints of ``loss`` with respect to ``params``.

        Returns one array per parameter, aligned with ``params``; parameters
        that did not participate in the forward pass get zeros.
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; build a new forward pass")
        if loss.data.shape != (1, 1):
            raise DimensionError(f"loss must be scalar, got shape {loss.data.shape}")
        if id(loss) not in self._produced:
            raise TapeError("loss was not produced under this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for out, inputs, backward_fn in reversed(self._records):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue
            for inp, g_in in zip(inputs, backward_fn(g_out)):
                if g_in is None or not inp.requires_grad:
                    continue
                acc = grads.get(id(inp))
                # Out-of-place: backward fns may hand out shared arrays/views.
                grads[id(inp)] = g_in if acc is None else acc + g_in
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _finish(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericsError("operation produced non-finite entries")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = track
    out.name = None
    if track:
        tape._record(out, inputs, backward)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _finish(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return (g.T,)

    return _finish(a.data.T.copy(), (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x n row broadcast over a's rows."""
    if a.shape == b.shape:
        def backward(g):
            return g, g
    elif b.rows == 1 and b.cols == a.cols:
        def backward(g):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _finish(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        return g, -g

    return _finish(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backward(g):
        return g * b.data, g * a.data

    return _finish(a.data * b.data, (a, b), backward)


def affine(a: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Constant map scale * a + shift (no learnable operands)."""

    def backward(g):
        return (g * scale,)

    return _finish(a.data * scale + shift, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _finish(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _finish(out, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    # Derivative at exactly 0 takes the positive branch (1.0).
    mask = a.data >= 0
    out = np.where(mask, a.data, slope * a.data)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _finish(out, (a,), backward)


def hstack(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise DimensionError(f"hstack: row counts differ, {a.shape} vs {b.shape}")
    split = a.cols

    def backward(g):
        return g[:, :split], g[:, split:]

    return _finish(np.hstack([a.data, b.data]), (a, b), backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of ``a``; the adjoint scatter-adds back into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a flat index vector")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise IndexError(f"row index out of range for {a.rows} rows")

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _finish(a.data[idx], (a,), backward)


def row_mean(a: Tensor) -> Tensor:
    """Per-row mean, (m, n) -> (m, 1)."""
    n = a.cols

    def backward(g):
        return (np.repeat(g / n, n, axis=1),)

    return _finish(a.data.mean(axis=1, keepdims=True), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    size = a.data.size

    def backward(g):
        return (np.full(a.shape, g[0, 0] / size),)

    return _finish(a.data.mean().reshape(1, 1), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.full(a.shape, g[0, 0]),)

    return _finish(a.data.sum().reshape(1, 1), (a,), backward)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
}


def elementwise(op: str, *operands, **kwargs) -> Tensor:
    """Dispatch by name into the pointwise op set."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise DimensionError(f"unknown elementwise op {op!r}") from None
    return fn(*operands, **kwargs)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias for weights stored as (out_dim, in_dim)."""
    return add(matmul(x, transpose(weight)), bias)


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, the gradient oracle."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def parameters(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
