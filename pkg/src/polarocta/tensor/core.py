"""Dense float tensors with a reverse-mode differentiation tape.

A ``Tensor`` wraps a numpy array (float32 by default, float64 for
verification runs).  Primitive operations append a ``TapeOp`` to the
currently active ``DiffRecord``; ``backward`` replays the record in
reverse to fill ``grad`` buffers by the chain rule.

Tensors are immutable after creation except for their grad buffer.  A
record belongs to a single forward pass and must not be shared across
concurrent backward calls.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, NumericsError, ShapeError, UsageError

SUPPORTED_DTYPES = (np.float32, np.float64)

# Names of every differentiable primitive; the gradcheck suite asserts it
# covers each one with at least one finite-difference case.
OP_NAMES: set[str] = set()

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle the finite-output assertion after every primitive op."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self))

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class TapeOp:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class DiffRecord:
    """Ordered tape of primitive ops executed under this record.

    Use as a context manager around a forward pass; nested records stack,
    the innermost one receives the ops.
    """

    __slots__ = ("ops", "_prev")

    def __init__(self):
        self.ops: list[TapeOp] = []
        self._prev = None

    def __enter__(self):
        global _active_record
        self._prev = _active_record
        _active_record = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_record
        _active_record = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.ops)


_active_record: Optional[DiffRecord] = None


def active_record() -> Optional[DiffRecord]:
    return _active_record


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        if x.data.dtype != like.data.dtype:
            raise ShapeError(
                f"mixed dtypes {x.data.dtype.name} and {like.data.dtype.name}"
            )
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _register(name: str) -> str:
    OP_NAMES.add(name)
    return name


def record_op(
    name: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Create the output tensor of a primitive op and record its backward rule.

    ``backward_fn`` maps the output gradient to one gradient array (or
    None) per input, in order.
    """
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise NumericsError(f"non-finite output of op '{name}'")
    needs = _active_record is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _active_record.ops.append(TapeOp(name, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_same_dtype(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"mixed dtypes {a.data.dtype.name} and {b.data.dtype.name}")


# ---------------------------------------------------------------------------
# elementwise primitives (limited broadcasting: what the model needs)
# ---------------------------------------------------------------------------

_ADD = _register("add")
_SUB = _register("sub")
_MUL = _register("mul")
_DIV = _register("div")
_NEG = _register("neg")
_EXP = _register("exp")
_LOG = _register("log")
_SQRT = _register("sqrt")
_RELU = _register("relu")
_SIGMOID = _register("sigmoid")
_TANH = _register("tanh")
_MAXIMUM = _register("maximum")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op(_ADD, (a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op(_SUB, (a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return record_op(_MUL, (a, b), out, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return record_op(_DIV, (a, b), out, backward)


def neg(a: Tensor) -> Tensor:
    return record_op(_NEG, (a,), -a.data, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record_op(_EXP, (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record_op(_LOG, (a,), np.log(ad), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        # at sqrt(0) the derivative is +inf; keep that where there is real
        # sensitivity, but do not let 0 * inf poison zero-gradient entries
        with np.errstate(divide="ignore", invalid="ignore"):
            r = g * (0.5 / out)
        return (np.where(g == 0, 0.0, r),)

    return record_op(_SQRT, (a,), out, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0)

    def backward(g):
        return (g * mask,)

    return record_op(_RELU, (a,), out, backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return record_op(_SIGMOID, (a,), out, backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return record_op(_TANH, (a,), out, backward)


_UNARY_KINDS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def unary_map(t: Tensor, kind: str) -> Tensor:
    """Elementwise relu / sigmoid / tanh, shape preserved."""
    try:
        fn = _UNARY_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown unary kind '{kind}'") from None
    return fn(t)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; gradient follows the winner, ties go to ``a``."""
    _check_same_dtype(a, b)
    mask = a.data >= b.data
    out = np.where(mask, a.data, b.data)

    def backward(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)

    return record_op(_MAXIMUM, (a, b), out, backward)


# ---------------------------------------------------------------------------
# structural primitives
# ---------------------------------------------------------------------------

_MATMUL = _register("matmul")
_TRANSPOSE = _register("transpose")
_RESHAPE = _register("reshape")
_CONCAT = _register("concat")
_INDEX = _register("index")
_SUM = _register("sum")
_MEAN = _register("mean")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        return g @ bd.T, ad.T @ g

    return record_op(_MATMUL, (a, b), out, backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return record_op(_TRANSPOSE, (a,), np.transpose(a.data, axes), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape

    def backward(g):
        return (g.reshape(orig),)

    return record_op(_RESHAPE, (a,), a.data.reshape(shape), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(_CONCAT, tensors, out, backward)


def index(a: Tensor, key) -> Tensor:
    """Basic slicing/integer indexing; backward scatters into zeros."""
    out = a.data[key]
    shape = a.shape
    dtype = a.data.dtype

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        z[key] = g
        return (z,)

    return record_op(_INDEX, (a,), np.array(out, copy=True), backward)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape
    dtype = a.data.dtype

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims).astype(dtype, copy=True),)

    return record_op(_SUM, (a,), np.asarray(out), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    dtype = a.data.dtype
    count = a.size if axis is None else np.prod(
        [shape[ax % len(shape)] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        ge = _expand_reduced(g, shape, axis, keepdims)
        return ((ge / count).astype(dtype, copy=False),)

    return record_op(_MEAN, (a,), np.asarray(out), backward)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def backward(loss: Tensor, record: DiffRecord) -> None:
    """Populate ``grad`` on every requires_grad tensor in the record.

    Tensors recorded but not on a path to ``loss`` receive a zero grad.
    Grads are assigned fresh (no accumulation across records): replaying
    two records one after the other yields identical results.
    """
    if loss.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op in reversed(record.ops):
        g = grads.get(id(op.output))
        if g is None:
            continue
        in_grads = op.backward_fn(g)
        for t, ig in zip(op.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            # never accumulate in place: backward rules may return views
            grads[id(t)] = ig if acc is None else acc + ig
    seen: dict[int, Tensor] = {}
    for op in record.ops:
        for t in op.inputs:
            seen.setdefault(id(t), t)
        seen.setdefault(id(op.output), op.output)
    seen.setdefault(id(loss), loss)
    for tid, t in seen.items():
        if t.requires_grad:
            t.grad = grads.get(tid, np.zeros_like(t.data))
