"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float32 by default). Every op preserves the dtype of
its inputs, so the same graph can be evaluated in float64 when checking
gradients against finite differences.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
LEAKY_SLOPE = 0.2

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        explicit = isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not explicit:
            # python scalars and lists default to f32; float ndarrays keep their dtype
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ----------------------------------------------------
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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by Python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} are not compatible") from None


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    """Square root with a zero subgradient at 0, so that ``sqrt(0)`` stays finite."""
    if np.any(a.data < 0):
        raise ValueError("sqrt of a negative value")
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0).astype(a.dtype),)

    return _make(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(np.minimum(a.data, 80.0))

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw)


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = a.data > 0
    factor = np.where(mask, 1.0, slope).astype(a.dtype)

    def bw(g):
        return (g * factor,)

    return _make(a.data * factor, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        return (g / (1.0 + np.exp(-x)),)

    return _make(out.astype(x.dtype), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


def scale_offset(x: Tensor, scale: Tensor, offset: Tensor) -> Tensor:
    """Fused ``x * scale + offset`` with broadcasting over the batch axis."""
    x, scale = _coerce_pair(x, scale)
    offset = as_tensor(offset, dtype=x.dtype)
    shape = _check_broadcast("scale_offset", x, scale)
    if np.broadcast_shapes(shape, offset.shape) != shape:
        raise ShapeError(f"scale_offset: offset shape {offset.shape} does not fit {shape}")

    def bw(g):
        return (
            _unbroadcast(g * scale.data, x.shape),
            _unbroadcast(g * x.data, scale.shape),
            _unbroadcast(g, offset.shape),
        )

    return _make(x.data * scale.data + offset.data, (x, scale, offset), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ (lhs dim 1 = {a.shape[1]}, rhs dim 0 = {b.shape[0]})"
        )

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    if a.dtype == np.float32 and b.dtype == np.float32:
        # f64 accumulation rounded to f32: row results do not depend on batch size
        # or BLAS kernel choice, which keeps per-example evaluation bit-reproducible
        out = (a.data.astype(np.float64) @ b.data.astype(np.float64)).astype(np.float32)
    else:
        out = a.data @ b.data
    return _make(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")

    def bw(g):
        return (g.T,)

    return _make(np.ascontiguousarray(a.data.T), (a,), bw)


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Rows of ``v`` rescaled to have norm ``g``: W[r] = g[r] * v[r] / ||v[r]||."""
    if v.ndim != 2 or g.shape != (v.shape[0],):
        raise ShapeError(f"weight_norm: direction {v.shape} incompatible with gain {g.shape}")
    norms = np.sqrt(np.sum(v.data * v.data, axis=1))
    if np.any(norms == 0):
        rows = np.flatnonzero(norms == 0).tolist()
        raise ValueError(f"weight_norm: zero-norm direction rows {rows}")
    unit = v.data / norms[:, None]
    out = g.data[:, None] * unit

    def bw(grad):
        grad_g = np.sum(grad * unit, axis=1)
        grad_v = (g.data / norms)[:, None] * (grad - grad_g[:, None] * unit)
        return grad_v, grad_g

    return _make(out, (v, g), bw)


# -- reductions and shape ops ------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bw)


def slice_(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing. Repeated indices accumulate gradient."""
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, dtype=a.dtype), (a,), bw)


def take_rows(a: Tensor, rows) -> Tensor:
    return slice_(a, np.asarray(rows, dtype=np.intp))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ShapeError(f"concat: shape {t.shape} does not match {ref.shape} off axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


# -- backward -----------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad.

    Interior nodes do not retain gradients. Calling twice without zeroing the
    leaves accumulates.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def grad_map(loss: Tensor, leaves: Iterable[Tensor]) -> dict[int, np.ndarray]:
    """Run backward and return {id(leaf): grad} (zeros where unreachable)."""
    leaves = list(leaves)
    backward(loss)
    return {id(t): (t.grad if t.grad is not None else np.zeros_like(t.data)) for t in leaves}
