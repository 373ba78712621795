"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every op builds a fresh node holding its value and a closure that maps the
output gradient to gradients of its parents. The graph is rebuilt on every
forward pass. A process-wide dtype switch selects float32 (training and
benchmarks) or float64 (gradient checks), and an optional counter tallies
floating-point operations under a fixed cost model.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_FILL = -1e9

_dtype = np.float32


def get_dtype():
    return _dtype


def set_dtype(dtype) -> None:
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype, e.g. ``with precision(np.float64):``."""
    old = _dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


class FlopCounter:
    """Accumulates per-op floating-point operation counts.

    Cost model: one flop per output element for elementwise ops, scaling and
    masking; 2*M*K*N per (M,K)x(K,N) product; one flop per input element for
    reductions; five per element for softmax (max, subtract, exp, sum, divide).
    """

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, count: int) -> None:
        self.total += int(count)
        self.by_op[op] = self.by_op.get(op, 0) + int(count)


_counter: FlopCounter | None = None
_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording backward closures."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


@contextlib.contextmanager
def count_flops():
    global _counter
    prev, _counter = _counter, FlopCounter()
    try:
        yield _counter
    finally:
        _counter = prev


def _flops(op: str, count: int) -> None:
    if _counter is not None:
        _counter.add(op, count)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires-grad leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# --------------------------------------------------------------------------
# core ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data
    _flops("add", out.size)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data
    _flops("sub", out.size)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data
    _flops("mul", out.size)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), backward, "mul")


def scale(a, factor: float) -> Tensor:
    """Multiply by a Python constant."""
    a = as_tensor(a)
    out = a.data * a.data.dtype.type(factor)
    _flops("scale", out.size)
    return _node(out, (a,), lambda g: (g * g.dtype.type(factor),), "scale")


def matmul(a, b) -> Tensor:
    """Batched matrix product with broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    out = np.matmul(a.data, b.data)
    _flops("matmul", 2 * math.prod(batch) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ValueError(f"transpose: {axes} is not a permutation of the axes of shape {a.shape}")
    inverse = tuple(np.argsort([ax % a.ndim for ax in axes]))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, ts, backward, "concat")


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out, copy=True), (a,), backward, "slice")


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    _flops("sum", a.size)

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else math.prod(a.shape[ax] for ax in axes)
    return scale(reduce_sum(a, axis, keepdims), 1.0 / count)


# --------------------------------------------------------------------------
# nonlinear ops
# --------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    (ax,) = _norm_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)
    _flops("softmax", 5 * out.size)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (x + k * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    _flops("gelu", 8 * x.size)

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x)
        return (g * d,)

    return _node(out, (a,), backward, "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    _flops("relu", a.size)
    return _node(np.where(pos, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * pos,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    _flops("sigmoid", a.size)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def layer_norm(a, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise along ``axis`` then apply the affine map ``gain * x + bias``."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    (ax,) = _norm_axis(axis, a.ndim)
    x = a.data
    mu = x.mean(axis=ax, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    _flops("layer_norm", 8 * x.size)
    n = x.shape[ax]

    def backward(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        if a.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=ax, keepdims=True) - xhat * (gh * xhat).sum(axis=ax, keepdims=True) / n)
        return gx, ggain, gbias

    return _node(out, (a, gain, bias), backward, "layer_norm")


def masked_fill(scores, mask, fill: float = MASK_FILL) -> Tensor:
    """Add ``fill`` wherever ``mask`` is 0; mask is a constant 0/1 array."""
    scores = as_tensor(scores)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    try:
        np.broadcast_shapes(m.shape, scores.shape)
    except ValueError:
        raise ValueError(f"masked_fill: mask {m.shape} does not broadcast to scores {scores.shape}") from None
    penalty = np.where(m != 0, 0.0, fill).astype(scores.data.dtype)
    out = scores.data + penalty
    if out.shape != scores.shape:
        raise ValueError(f"masked_fill: mask {m.shape} would enlarge scores {scores.shape}")
    _flops("masked_fill", out.size)
    return _node(out, (scores,), lambda g: (g,), "masked_fill")


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy, softplus(x) - t*x, for 0/1 targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets).astype(logits.data.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"bce_with_logits: logits {logits.shape} vs targets {t.shape}")
    x = logits.data
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    count = x.size
    out = np.asarray(loss.mean(), dtype=x.dtype)
    _flops("bce", 6 * count)
    return _node(out, (logits,), lambda g: (g * (_sigmoid(x) - t) / count,), "bce")
