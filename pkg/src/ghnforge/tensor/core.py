"""Dense tensors over numpy buffers with tape-based reverse-mode autodiff.

A Tape records one backward closure per produced tensor, in execution order.
Replaying the closures in reverse is a valid reverse-topological sweep, so
``backward(loss)`` is one linear pass. Ops never mutate their inputs; the only
mutation anywhere is gradient accumulation into ``.grad`` buffers.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ghnforge.errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

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
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """The raw buffer. Treat as read-only; ops assume immutability."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, context: str = "tensor") -> "Tensor":
        """Check barrier: raise NumericError if the buffer holds NaN/Inf."""
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite values detected in {context}")
        return self

    # -- ergonomic wrappers over the module-level primitives -------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; use mul + pow_const")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of (output, backward-closure) pairs."""

    __slots__ = ("_ops", "_consumed")

    def __init__(self):
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._ops)


_ACTIVE: Tape | None = None


def active_tape() -> Tape | None:
    return _ACTIVE


@contextlib.contextmanager
def record(tape: Tape | None = None):
    """Activate a tape so ops executed in the body register backward closures."""
    global _ACTIVE
    new = tape if tape is not None else Tape()
    prev = _ACTIVE
    _ACTIVE = new
    try:
        yield new
    finally:
        _ACTIVE = prev


@contextlib.contextmanager
def no_grad():
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = None
    try:
        yield
    finally:
        _ACTIVE = prev


def _tracked(*tensors: "Tensor") -> bool:
    if _ACTIVE is None:
        return False
    return any(t.requires_grad for t in tensors)


def _register(out: Tensor, fn: Callable[[np.ndarray], None]) -> None:
    out.requires_grad = True
    out._tape = _ACTIVE
    _ACTIVE._ops.append((out, fn))  # type: ignore[union-attr]


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Replay the loss's tape in reverse, accumulating leaf gradients.

    Errors if the loss is not scalar, was not recorded on a tape, or if the
    tape was already consumed (re-record the computation to differentiate
    again).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not produced on an active tape; wrap the computation in record()")
    if tape._consumed:
        raise RuntimeError("backward already ran on this tape; re-record the computation first")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._ops):
        g = out.grad
        if g is None:
            continue
        fn(g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if _tracked(a, b):
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))
        _register(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    if _tracked(a, b):
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.shape))
        _register(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if _tracked(a, b):
        ad, bd = a.data, b.data
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * bd, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * ad, b.shape))
        _register(out, bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)
    if _tracked(x):
        def bwd(g):
            _accum(x, g * c)
        _register(out, bwd)
    return out


def shift(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + c)
    if _tracked(x):
        def bwd(g):
            _accum(x, g)
        _register(out, bwd)
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Strict same-shape n-ary sum (one tape entry regardless of arity)."""
    if not tensors:
        raise ShapeError("add_n needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.shape != first.shape:
            raise ShapeError(f"add_n shape mismatch: {t.shape} vs {first.shape}")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor(acc)
    if _tracked(*tensors):
        def bwd(g):
            for t in tensors:
                if t.requires_grad:
                    _accum(t, g)
        _register(out, bwd)
    return out


def weighted_sum(tensors: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if len(tensors) != len(weights) or not tensors:
        raise ShapeError("weighted_sum needs matching non-empty tensors/weights")
    acc = tensors[0].data * weights[0]
    for t, w in zip(tensors[1:], weights[1:]):
        acc += t.data * w
    out = Tensor(acc)
    if _tracked(*tensors):
        def bwd(g):
            for t, w in zip(tensors, weights):
                if t.requires_grad:
                    _accum(t, g * w)
        _register(out, bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 1D @ 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    if _tracked(a, b):
        ad, bd = a.data, b.data
        def bwd(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(bd, -1, -2))
                _accum(a, _unbroadcast(ga, a.shape))
            if b.requires_grad:
                if ad.ndim == 1:  # vector @ matrix: out[m] = sum_k a[k] b[k, m]
                    gb = ad[:, None] * g[..., None, :]
                else:
                    gb = np.matmul(np.swapaxes(ad, -1, -2), g)
                _accum(b, _unbroadcast(gb, b.shape))
        _register(out, bwd)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if _tracked(x):
        orig = x.shape
        def bwd(g):
            _accum(x, g.reshape(orig))
        _register(out, bwd)
    return out


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    if _tracked(x):
        if axes is None:
            inv = None
        else:
            inv = tuple(np.argsort(axes))
        def bwd(g):
            _accum(x, np.transpose(g, inv))
        _register(out, bwd)
    return out


def getitem(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with slices/ints; differentiable."""
    out = Tensor(x.data[key])
    if _tracked(x):
        def bwd(g):
            full = np.zeros_like(x.data)
            full[key] = g
            _accum(x, full)
        _register(out, bwd)
    return out


def tile(x: Tensor, reps: tuple[int, ...]) -> Tensor:
    out = Tensor(np.tile(x.data, reps))
    if _tracked(x):
        base = x.shape
        # np.tile right-aligns reps with the result shape
        rr = np.ones(max(len(base), len(reps)), dtype=int)
        rr[len(rr) - len(reps):] = reps
        bshape = (1,) * (len(rr) - len(base)) + base
        def bwd(g):
            shaped = g.reshape(tuple(v for r, s in zip(rr, bshape) for v in (r, s)))
            shaped = shaped.sum(axis=tuple(range(0, 2 * len(rr), 2)))
            _accum(x, shaped.reshape(base))
        _register(out, bwd)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    nd = tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ShapeError(f"concat rank mismatch: {t.ndim} vs {nd}")
        for ax in range(nd):
            if ax != axis % nd and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(
                    f"concat shape mismatch on axis {ax}: {t.shape} vs {tensors[0].shape}"
                )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _tracked(*tensors):
        sizes = [t.shape[axis % nd] for t in tensors]
        def bwd(g):
            start = 0
            for t, s in zip(tensors, sizes):
                if t.requires_grad:
                    sl = [slice(None)] * nd
                    sl[axis % nd] = slice(start, start + s)
                    _accum(t, g[tuple(sl)])
                start += s
        _register(out, bwd)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of zero tensors")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if _tracked(*tensors):
        def bwd(g):
            parts = np.split(g, len(tensors), axis=axis)
            for t, p in zip(tensors, parts):
                if t.requires_grad:
                    _accum(t, p.reshape(t.shape))
        _register(out, bwd)
    return out


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    if _tracked(x):
        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(x, np.broadcast_to(gg, x.shape))
        _register(out, bwd)
    return out


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    if _tracked(x):
        denom = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(x, np.broadcast_to(gg, x.shape) / denom)
        _register(out, bwd)
    return out


def pow_const(x: Tensor, p: float) -> Tensor:
    out = Tensor(x.data ** p)
    if _tracked(x):
        xd = x.data
        def bwd(g):
            _accum(x, g * p * xd ** (p - 1.0))
        _register(out, bwd)
    return out


def sqrt(x: Tensor) -> Tensor:
    return pow_const(x, 0.5)


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))
    if _tracked(x):
        od = out.data
        def bwd(g):
            _accum(x, g * od)
        _register(out, bwd)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    if _tracked(x):
        xd = x.data
        def bwd(g):
            _accum(x, g / xd)
        _register(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if _tracked(x):
        mask = x.data > 0
        def bwd(g):
            _accum(x, g * mask)
        _register(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable two-sided form
    xd = x.data
    out_data = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor(out_data.astype(xd.dtype, copy=False))
    if _tracked(x):
        od = out.data
        def bwd(g):
            _accum(x, g * od * (1.0 - od))
        _register(out, bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    if _tracked(x):
        od = out.data
        def bwd(g):
            _accum(x, g * (1.0 - od * od))
        _register(out, bwd)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=axis, keepdims=True))
    if _tracked(x):
        od = out.data
        def bwd(g):
            dot = (g * od).sum(axis=axis, keepdims=True)
            _accum(x, od * (g - dot))
        _register(out, bwd)
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup (embedding); backward scatter-adds into the table."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows expects a 1-D index array, got shape {idx.shape}")
    out = Tensor(table.data[idx])
    if _tracked(table):
        def bwd(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accum(table, full)
        _register(out, bwd)
    return out


def parameter(data, dtype=None) -> Tensor:
    """A leaf tensor that wants gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def assert_all_finite(arrays: Iterable[np.ndarray], context: str) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite values detected in {context}")
