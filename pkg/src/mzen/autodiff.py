"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every :class:`Tensor` records the operation that produced it and a closure
that maps the output cotangent to parent cotangents. Values are computed
eagerly, so building an expression *is* the forward pass; :func:`backward`
walks the recorded graph in reverse topological order.

The op set is deliberately small: what the radiance field, the renderer,
the losses and the pose parameterisation need, and nothing else.

Example:
    >>> x = Tensor(3.0, requires_grad=True)
    >>> y = x * x
    >>> grads = backward(y)
    >>> float(grads[x])
    6.0
"""

from __future__ import annotations

import contextlib
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import GraphError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (values are still computed)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """An array value plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward_fn: Optional[Callable] = None, op: str = "leaf", name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undoing numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(value, parents, backward_fn, op) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _broadcast_check(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}", a.shape, b.shape) from None


# ----------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    av, bv = a.value, b.value

    def bw(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(av * bv, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    return mul(a, reciprocal(b))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.value
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


# ----------------------------------------------------------------------------
# elementwise unary ops


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def sin(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    return _make(np.sin(v), (a,), lambda g: (g * np.cos(v),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    return _make(np.cos(v), (a,), lambda g: (-g * np.sin(v),), "cos")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * s,), "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    return _make(v * v, (a,), lambda g: (2.0 * g * v,), "square")


# ----------------------------------------------------------------------------
# reductions and structure


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis=-1, exclusive=False) -> Tensor:
    """Cumulative sum along ``axis``; ``exclusive`` shifts so element 0 is 0."""
    a = as_tensor(a)
    out = np.cumsum(a.value, axis=axis)
    if exclusive:
        out = out - a.value

    def bw(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        if exclusive:
            rev = rev - g
        return (rev,)

    return _make(out, (a,), bw, "cumsum")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}", a.shape, b.shape)
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast {a.shape} @ {b.shape}", a.shape, b.shape) from None
    av, bv = a.value, b.value

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def concat(tensors: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes", *[t.shape for t in ts]) from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bw, "concat")


def stack(tensors: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("stack: incompatible shapes", *[t.shape for t in ts]) from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, tuple(ts), bw, "stack")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {old} -> {shape}", old) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(a, ax1, ax2) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.value, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], (a,), bw, "getitem")


# ----------------------------------------------------------------------------
# rotation parameterisation

_SMALL_ANGLE2 = 1e-6


def _skew(v):
    """Batched cross-product matrices, shape (..., 3, 3)."""
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([z, -w, y], -1),
        np.stack([w, z, -x], -1),
        np.stack([-y, x, z], -1),
    ], -2)


def _rodrigues_coeffs(s):
    """A(s)=sin(t)/t, B(s)=(1-cos t)/t^2 and their s-derivatives, s=t^2."""
    s = np.asarray(s, dtype=np.float64)
    small = s < _SMALL_ANGLE2
    t = np.sqrt(np.where(small, 1.0, s))
    sin_t, cos_t = np.sin(t), np.cos(t)
    A = np.where(small, 1 - s / 6 + s * s / 120, sin_t / t)
    B = np.where(small, 0.5 - s / 24 + s * s / 720, (1 - cos_t) / (t * t))
    dA = np.where(small, -1 / 6 + s / 60 - s * s / 1680, (t * cos_t - sin_t) / (2 * t ** 3))
    dB = np.where(small, -1 / 24 + s / 360 - s * s / 13440,
                  (t * sin_t - 2 * (1 - cos_t)) / (2 * t ** 4))
    return A, B, dA, dB


_BASIS_SKEW = _skew(np.eye(3))


def rotation_from_axis_angle(v) -> Tensor:
    """Rodrigues exponential map from axis-angle vectors (..., 3) to (..., 3, 3).

    Uses a Taylor branch for tiny angles so v = 0 is exact and smooth.
    """
    v = as_tensor(v)
    if v.shape[-1] != 3:
        raise ShapeError("axis-angle vectors must have a trailing dimension of 3", v.shape)
    vv = v.value
    s = np.sum(vv * vv, axis=-1)
    A, B, dA, dB = _rodrigues_coeffs(s)
    K = _skew(vv)
    K2 = K @ K
    R = np.eye(3) + A[..., None, None] * K + B[..., None, None] * K2

    def bw(g):
        grads = []
        for i in range(3):
            Ei = _BASIS_SKEW[i]
            dK2 = Ei @ K + K @ Ei
            vi = vv[..., i][..., None, None]
            dR = (2 * vi * dA[..., None, None] * K + A[..., None, None] * Ei
                  + 2 * vi * dB[..., None, None] * K2 + B[..., None, None] * dK2)
            grads.append(np.sum(g * dR, axis=(-1, -2)))
        return (np.stack(grads, -1),)

    return _make(R, (v,), bw, "axis_angle_to_matrix")


# ----------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor, grad=None, accumulate: bool = True) -> Dict[Tensor, np.ndarray]:
    """Back-propagate from ``root`` and return ``{leaf: gradient}``.

    Args:
        root: output tensor. Scalars are seeded with 1 unless ``grad`` is given.
        grad: cotangent of ``root``; required for non-scalar roots.
        accumulate: add into ``leaf.grad`` (True) or only return the map.
    """
    if not isinstance(root, Tensor):
        raise GraphError("backward() needs a Tensor root")
    if grad is None:
        if root.value.size != 1:
            raise GraphError(f"non-scalar root of shape {root.shape} needs an explicit cotangent")
        grad = np.ones_like(root.value)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != root.shape:
        raise ShapeError("cotangent shape differs from root shape", grad.shape, root.shape)
    leaves: Dict[Tensor, np.ndarray] = {}
    if not root.requires_grad:
        return leaves

    order = _topological_order(root)
    grads = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            leaves[node] = g
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if accumulate:
        for leaf, g in leaves.items():
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaves


class ValueGraph:
    """A re-evaluable expression: ``fn`` maps leaf tensors to a root tensor.

    ``forward`` binds fresh leaf values and evaluates; ``backward`` returns
    gradients with respect to those leaves in the order they were given.
    """

    def __init__(self, fn: Callable[..., Tensor]):
        self.fn = fn
        self.leaves = None
        self.root = None

    def forward(self, *leaf_values) -> np.ndarray:
        self.leaves = [Tensor(np.array(v, dtype=np.float64), requires_grad=True) for v in leaf_values]
        self.root = self.fn(*self.leaves)
        if not isinstance(self.root, Tensor):
            raise GraphError("graph function must return a Tensor")
        return self.root.value

    def backward(self, grad=None):
        if self.root is None:
            raise GraphError("backward() called before forward()")
        gmap = backward(self.root, grad, accumulate=False)
        return [gmap.get(leaf, np.zeros_like(leaf.value)) for leaf in self.leaves]


def jacobian(fn: Callable[[Tensor], Tensor], x) -> np.ndarray:
    """Dense Jacobian d fn(x) / d x as an (out.size, x.size) array."""
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = fn(leaf)
    rows = []
    seed = np.zeros(out.value.size)
    for k in range(out.value.size):
        seed[:] = 0.0
        seed[k] = 1.0
        g = backward(out, seed.reshape(out.shape), accumulate=False).get(leaf)
        rows.append(np.zeros(leaf.value.size) if g is None else g.ravel())
    return np.array(rows)
