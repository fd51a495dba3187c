"""Rank-2 tensors with tape-based reverse-mode differentiation.

Every value in the model is a dense ``rows x cols`` array.  Operations run
eagerly on numpy buffers; when a :class:`Tape` is active and at least one
operand requires a gradient, the operation appends a record holding a
vector-Jacobian closure.  :func:`backward` replays those records in strict
reverse order.

Binary elementwise ops accept ``1 x n`` rows and ``m x 1`` columns as
broadcast operands, which is all the model needs for biases and gates.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "backward",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "transpose",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "total",
    "row_sums",
    "softmax_rows",
    "concat_cols",
    "concat_rows",
    "slice_rows",
    "max_over_rows",
    "bce_with_logits",
    "dropout",
]


class ShapeError(ValueError):
    """Operand extents violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A forward value became NaN or infinite."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; tapes nest per thread and the innermost one
    receives records.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Vjp]] = []

    @classmethod
    def current(cls) -> "Tape | None":
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, vjp in reversed(self.records):
            for t in inputs:
                if t.requires_grad and t._tape is None:
                    leaves.setdefault(id(t), t)
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf feeding ``loss``.

    Gradients accumulate across calls; reset with ``zero_grad``.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if loss._tape is None:
        raise ValueError("loss is not on a tape (was it computed inside `with Tape():`?)")
    loss._tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Vjp) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._tape = None
    tape = Tape.current()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                out._tape = tape
                tape.records.append((out, inputs, vjp))
                break
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    (ar, ac), (br, bc) = a.shape, b.shape
    if (ar == br or ar == 1 or br == 1) and (ac == bc or ac == 1 or bc == 1):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _emit(ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _emit(ad * bd, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return _emit(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _emit(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _emit(e, (x,), lambda g: (g * e,))


def total(x) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    x = as_tensor(x)
    shape = x.shape
    return _emit(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def row_sums(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _emit(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax_rows(x, mask=None, row_mask=None) -> Tensor:
    """Row-wise softmax restricted to ``mask``-true entries.

    Masked entries come out exactly 0.  Rows switched off by ``row_mask``
    are all-zero; any other row with no unmasked entry is an error.
    """
    x = as_tensor(x)
    z = x.data
    m = np.ones(z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != z.shape:
        raise ShapeError(f"softmax_rows: mask shape {m.shape} != input shape {z.shape}")
    if row_mask is not None:
        rm = np.asarray(row_mask, dtype=bool).reshape(-1)
        if rm.shape[0] != z.shape[0]:
            raise ShapeError("softmax_rows: row_mask length differs from row count")
        m = m & rm[:, None]
    else:
        rm = None
    has_any = m.any(axis=1)
    if rm is None:
        if not has_any.all():
            raise ValueError(f"softmax_rows: row {int(np.argmin(has_any))} is fully masked")
    elif not has_any[rm].all():
        bad = int(np.flatnonzero(rm & ~has_any)[0])
        raise ValueError(f"softmax_rows: valid row {bad} has no unmasked entries")
    shifted = np.where(m, z, -np.inf)
    row_max = shifted.max(axis=1, keepdims=True)
    row_max = np.where(has_any[:, None], row_max, 0.0)
    e = np.where(m, np.exp(np.where(m, z - row_max, 0.0)), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    p = e / np.where(denom > 0, denom, 1.0)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (x,), vjp)


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    p = a.shape[1]
    return _emit(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :p], g[:, p:]))


def concat_rows(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: column counts differ, {a.shape} vs {b.shape}")
    p = a.shape[0]
    return _emit(np.concatenate([a.data, b.data], axis=0), (a, b), lambda g: (g[:p], g[p:]))


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    rows, cols = x.shape
    if not 0 <= start <= stop <= rows:
        raise ShapeError(f"slice_rows: [{start}:{stop}] outside {rows} rows")

    def vjp(g):
        full = np.zeros((rows, cols), dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _emit(x.data[start:stop].copy(), (x,), vjp)


def max_over_rows(x, row_mask=None, segments=None, n_segments: int | None = None) -> Tensor:
    """Column-wise maximum over valid rows.

    With ``segments`` (one integer id per row) the maximum is taken per
    segment and the result has one row per segment.  Ties route the
    gradient to the lowest row index.
    """
    x = as_tensor(x)
    z = x.data
    rows, cols = z.shape
    valid = np.ones(rows, dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool).reshape(-1)
    if valid.shape[0] != rows:
        raise ShapeError("max_over_rows: row_mask length differs from row count")
    seg = np.zeros(rows, dtype=np.int64) if segments is None else np.asarray(segments, dtype=np.int64).reshape(-1)
    if seg.shape[0] != rows:
        raise ShapeError("max_over_rows: segments length differs from row count")
    n_seg = (int(seg.max()) + 1 if rows else 1) if n_segments is None else n_segments
    out = np.empty((n_seg, cols), dtype=z.dtype)
    argrows = np.empty((n_seg, cols), dtype=np.int64)
    for s in range(n_seg):
        idx = np.flatnonzero(valid & (seg == s))
        if idx.size == 0:
            raise ValueError(f"max_over_rows: segment {s} has no valid rows")
        block = z[idx]
        a = block.argmax(axis=0)  # first occurrence on ties
        argrows[s] = idx[a]
        out[s] = block[a, np.arange(cols)]

    def vjp(g):
        full = np.zeros((rows, cols), dtype=g.dtype)
        col_idx = np.broadcast_to(np.arange(cols), argrows.shape)
        np.add.at(full, (argrows, col_idx), g)
        return (full,)

    return _emit(out, (x,), vjp)


def bce_with_logits(logits, targets) -> Tensor:
    """Summed binary cross-entropy of sigmoid(logits) against soft targets.

    Uses log(sigmoid(y)) = -softplus(-y) so large |y| never overflows; the
    gradient is exactly sigmoid(y) - t.
    """
    y = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=y.data.dtype)
    t = t.reshape(y.shape) if t.size == y.data.size else t
    if t.shape != y.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {y.shape}")
    if (t < 0).any() or (t > 1).any():
        raise ValueError("targets must lie in [0, 1]")
    z = y.data
    # softplus(z) - t*z == -(t log s + (1-t) log(1-s))
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = (softplus - t * z).sum()
    s = _sigmoid(z)
    return _emit(np.array([[loss]]), (y,), lambda g: (g[0, 0] * (s - t),))


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep.astype(x.data.dtype)))

