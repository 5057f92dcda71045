"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies storage and kernels; the graph, gradients, and every
differentiable operation live here. float32 is the working precision,
float64 is used by gradient checks and oracle tests (see `use_dtype`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_SENTINEL = -1e9  # masked logits take this value; exp() underflows to an exact 0


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(TensorError):
    """Operand shapes are incompatible."""


class NonFiniteError(TensorError):
    """An operation produced (or was handed) NaN or Inf values."""


class GradError(TensorError):
    """Invalid use of the autodiff graph."""


class FullyMaskedRowError(TensorError):
    """A softmax row had every entry masked."""


_default_dtype = np.float32
_grad_enabled = True


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise TensorError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype.type


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default element type (e.g. float64 for oracles)."""
    global _default_dtype
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward values are unaffected."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    # fast path: one reduction; NaN/Inf propagate into the sum. A finite
    # array whose sum merely overflows passes the full elementwise check.
    with np.errstate(over="ignore", invalid="ignore"):
        s = arr.sum()
    if not np.isfinite(s) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense n-d array that may participate in an autodiff graph.

    Tensors are value-like: construction copies the input buffer, and no
    operation mutates an existing tensor's elements. Gradients accumulate
    (by sum over all paths) on `requires_grad` leaves after `backward()`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TensorError("cannot wrap a Tensor in a Tensor; use .detach()")
        arr = np.array(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                 backward: Callable[[np.ndarray], tuple] | None) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    # -- basic introspection --------------------------------------------------

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

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy; treat as read-only)."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, (), "detach", None)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag}, op={self._op})"

    # -- autodiff --------------------------------------------------------------

    def backward(self, retain_graph: bool = False) -> None:
        """Populate `.grad` on every requires_grad leaf reachable from here.

        The loss must be scalar. Accumulation order is the reverse of a fixed
        topological order, so repeated runs are bitwise deterministic. Unless
        `retain_graph` is set, interior nodes are released and a second
        backward raises GradError.
        """
        if self.data.size != 1:
            raise GradError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GradError("backward() on a tensor that does not require grad")
        if self._backward_fn is None and self._parents == () and self._op == "_consumed":
            raise GradError("graph already consumed; pass retain_graph=True to reuse it")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad and node._parents == ():
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            if not retain_graph:
                node._parents = ()
                node._backward_fn = None
                node._op = "_consumed"

    # -- operator sugar ---------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    with np.errstate(divide="ignore", invalid="ignore"):  # NonFiniteError follows
        data = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._from_op(data, (a, b), "div", backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), "neg", backward)


def power(a, exponent: float) -> Tensor:
    """Elementwise a**exponent for a constant (non-tensor) exponent."""
    a = _as_tensor(a)
    e = float(exponent)
    with np.errstate(over="ignore", invalid="ignore"):
        data = a.data ** e

    def backward(g):
        return (g * e * a.data ** (e - 1.0),)

    return Tensor._from_op(data, (a,), "pow", backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return Tensor._from_op(data, (a,), "exp", backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return Tensor._from_op(data, (a,), "log", backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * data),)

    return Tensor._from_op(data, (a,), "sqrt", backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return Tensor._from_op(data, (a,), "relu", backward)


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    data = a.data.reshape(tuple(shape))

    def backward(g):
        return (g.reshape(old),)

    return Tensor._from_op(data, (a,), "reshape", backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(data, (a,), "transpose", backward)


def expand(a, shape: Sequence[int]) -> Tensor:
    """Broadcast to `shape`; gradient sums over the broadcast axes."""
    a = _as_tensor(a)
    old = a.data.shape
    data = np.broadcast_to(a.data, tuple(shape)).copy()

    def backward(g):
        return (_unbroadcast(g, old),)

    return Tensor._from_op(data, (a,), "expand", backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor._from_op(data, tuple(parts), "concat", backward)


# -- reductions -----------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        return (_restore_axes(g, shape, axis, keepdims).copy(),)

    return Tensor._from_op(np.asarray(data), (a,), "sum", backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    if axis is None:
        count = int(a.data.size)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= shape[ax % len(shape)]

    def backward(g):
        return (_restore_axes(g, shape, axis, keepdims) / count,)

    return Tensor._from_op(np.asarray(data), (a,), "mean", backward)


# -- matrix product ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; inputs of ndim >= 2, leading axes broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):  # NonFiniteError follows
        data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._from_op(data, (a, b), "matmul", backward)


# -- fused neural-net primitives -----------------------------------------------


def softmax_masked(logits, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with optional prohibition mask.

    `mask` is boolean, broadcastable to the logits shape, True = prohibited.
    Masked logits are replaced by a -1e9 sentinel before the numerically
    stabilized exp-normalize, which makes masked weights an exact 0.0 and
    routes no gradient to masked entries.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        # broadcasting only replicates rows, so checking the base mask suffices
        if m.all(axis=-1).any():
            raise FullyMaskedRowError(
                "softmax row with every entry masked (neighbor size too large for grid?)")
        x = np.where(m, x.dtype.type(MASK_SENTINEL), x)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    w = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * w).sum(axis=-1, keepdims=True)
        return (w * (g - inner),)

    return Tensor._from_op(w, (logits,), "softmax_masked", backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit (population) variance,
    then scale and shift: gamma * x_hat + beta."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma, like=x)
    beta = _as_tensor(beta, like=x)
    c = x.data.shape[-1] if x.ndim > 0 else 0
    if c == 0:
        raise ShapeError("layer_norm over an empty channel axis")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        gxhat = g * gamma.data
        gx = inv * (gxhat
                    - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), "layer_norm", backward)
