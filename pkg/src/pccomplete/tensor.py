"""Dense tensors with reverse-mode differentiation.

The op set is deliberately closed: matmul, add, mul_scalar, concat (last
axis), reshape, relu, max_axis (with argmax indices), mean_axis, square,
sqrt, gather_rows and tile_rows. Everything the networks and losses need is
composed from these. There is no broadcasting apart from scalar-with-tensor;
row replication is explicit through ``tile_rows``.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, NumericFault

_default_dtype = np.float64
_grad_enabled = True
_node_ids = itertools.count()


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractViolation(f"unsupported scalar type {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A real-valued array that can take part in a recorded graph.

    ``grad`` is only filled in for leaf tensors with ``requires_grad=True``;
    intermediate gradients live in the backward pass and are discarded.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or _default_dtype)
        if not np.isfinite(arr).all():
            raise NumericFault("non-finite value in tensor construction", op="leaf")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.node_id = next(_node_ids)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "leaf"
        out.node_id = next(_node_ids)
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_scalar(other, -1.0))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(mul_scalar(self, -1.0), other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise ContractViolation("tensor*tensor is not in the op set; use mul_scalar")
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractViolation("tensor/tensor is not in the op set")
        return mul_scalar(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.node_id = next(_node_ids)
    if not np.isfinite(data).all():
        raise NumericFault(f"non-finite output from {op} (node {out.node_id})",
                           op=op, node_id=out.node_id)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _record(ad @ bd, "matmul", (a, b), grad_fn)


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum of equal-shape tensors, or tensor plus scalar."""
    if not isinstance(b, Tensor):
        value = float(b)

        def grad_scalar(g):
            return (g,)

        return _record(a.data + a.data.dtype.type(value), "add", (a,), grad_scalar)
    if a.shape == b.shape:
        def grad_fn(g):
            return g, g

        return _record(a.data + b.data, "add", (a, b), grad_fn)
    if b.size == 1:
        def grad_bscalar(g):
            return g, g.sum().reshape(b.shape)

        return _record(a.data + b.data.reshape(()), "add", (a, b), grad_bscalar)
    if a.size == 1:
        return add(b, a)
    raise ContractViolation(f"add shapes {a.shape} and {b.shape} differ (no broadcasting)")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def grad_fn(g):
        return (g * s,)

    return _record(a.data * s, "mul_scalar", (a,), grad_fn)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tensors = list(tensors)
    if not tensors:
        raise ContractViolation("concat of nothing")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.ndim != tensors[0].ndim or t.shape[:-1] != lead:
            raise ContractViolation(
                f"concat needs matching leading dims, got {[x.shape for x in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(widths)))

    return _record(np.concatenate([t.data for t in tensors], axis=-1), "concat", tensors, grad_fn)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors vertically, composed from reshape and last-axis concat."""
    width = tensors[0].shape[1]
    for t in tensors:
        if t.ndim != 2 or t.shape[1] != width:
            raise ContractViolation("concat_rows needs 2-D tensors of equal width")
    flat = concat([reshape(t, (1, t.size)) for t in tensors])
    return reshape(flat, (flat.size // width, width))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ContractViolation(f"cannot reshape {a.shape} to {shape}")
    src = a.shape

    def grad_fn(g):
        return (g.reshape(src),)

    return _record(a.data.reshape(shape), "reshape", (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _record(np.where(mask, a.data, a.data.dtype.type(0)), "relu", (a,), grad_fn)


def max_axis(a: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Maximum over one axis; returns values and argmax indices (lowest index on ties)."""
    if a.shape[axis] == 0:
        raise ContractViolation("max over an empty axis")
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    values = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    src = a.shape

    def grad_fn(g):
        out = np.zeros(src, dtype=g.dtype)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _record(np.squeeze(values, axis=axis), "max_axis", (a,), grad_fn), idx


def mean_axis(a: Tensor, axis=None) -> Tensor:
    """Mean over ``axis``; ``axis=None`` reduces everything to a scalar."""
    src = a.shape
    if axis is None:
        n = a.size

        def grad_all(g):
            return (np.full(src, g / n, dtype=a.data.dtype),)

        return _record(np.asarray(a.data.mean()), "mean_axis", (a,), grad_all)
    axis = axis % a.ndim
    n = src[axis]

    def grad_fn(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(a.data.mean(axis=axis), "mean_axis", (a,), grad_fn)


def square(a: Tensor) -> Tensor:
    ad = a.data

    def grad_fn(g):
        return (2 * ad * g,)

    return _record(ad * ad, "square", (a,), grad_fn)


def sqrt(a: Tensor) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    if (a.data < 0).any():
        raise ContractViolation("sqrt of a negative value")
    out = np.sqrt(a.data)

    def grad_fn(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, 0.5 * g / safe, 0),)

    return _record(out, "sqrt", (a,), grad_fn)


def gather_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise ContractViolation("gather_rows index must be 1-D")
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ContractViolation(f"gather_rows index out of range for {n} rows")
    src = a.shape

    def grad_fn(g):
        out = np.zeros(src, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _record(a.data[index], "gather_rows", (a,), grad_fn)


def tile_rows(a: Tensor, reps: int) -> Tensor:
    """Repeat every row ``reps`` times in place: row i becomes rows i*reps .. i*reps+reps-1."""
    reps = int(reps)
    if reps < 1:
        raise ContractViolation("tile_rows needs reps >= 1")
    src = a.shape

    def grad_fn(g):
        return (g.reshape((src[0], reps) + src[1:]).sum(axis=1),)

    return _record(np.repeat(a.data, reps, axis=0), "tile_rows", (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    return mul_scalar(mean_axis(a), a.size)


def topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    When ``params`` is given, any of them without a gradient afterwards gets
    an explicit zero array.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
