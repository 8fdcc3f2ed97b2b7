"""Minimal define-by-run reverse-mode automatic differentiation.

Every operation builds a fresh node that remembers its parents and a closure
propagating the output adjoint back to them. ``backward`` sorts the graph
reachable from a scalar root topologically and runs the closures in reverse.

Broadcasting is restricted to the leading (batch) axis: a right operand of
shape ``a.shape[1:]`` is repeated over the rows of ``a``. Everything else must
match exactly.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(like.shape, float(arr))
    return Tensor(arr)


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` broadcasts over the batch axis of ``a``."""
    if a.shape == b.shape:
        return False
    if a.data.ndim >= 1 and b.shape == a.shape[1:]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} (left) and {b.shape} (right)")


# ---------------------------------------------------------------- binary ops

def add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_broadcast(a, b, "add")

    def _bw(g):
        a._accumulate(g)
        b._accumulate(g.sum(axis=0) if bcast else g)

    return _node(a.data + b.data, (a, b), _bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_broadcast(a, b, "sub")

    def _bw(g):
        a._accumulate(g)
        b._accumulate(-(g.sum(axis=0) if bcast else g))

    return _node(a.data - b.data, (a, b), _bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_broadcast(a, b, "mul")

    def _bw(g):
        a._accumulate(g * b.data)
        gb = g * a.data
        b._accumulate(gb.sum(axis=0) if bcast else gb)

    return _node(a.data * b.data, (a, b), _bw, "mul")


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """``a @ b`` (or ``a @ b.T``) for 2-D operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if a.shape[1] != inner_b:
        rhs = f"{b.shape}^T" if transpose_b else f"{b.shape}"
        raise ShapeError(f"matmul: inner dimensions differ, left {a.shape} vs right {rhs}")
    bd = b.data.T if transpose_b else b.data
    out = a.data @ bd

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g @ bd.T)
        if b.requires_grad:
            gb = a.data.T @ g
            b._accumulate(gb.T if transpose_b else gb)

    return _node(out, (a, b), _bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine layer ``x W^T + b`` with ``W`` stored as (out, in)."""
    out = matmul(x, weight, transpose_b=True)
    return out if bias is None else add(out, bias)


# ----------------------------------------------------------------- unary ops

def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: a._accumulate(g * c), "scale")


def sin(a: Tensor) -> Tensor:
    return _node(np.sin(a.data), (a,), lambda g: a._accumulate(g * np.cos(a.data)), "sin")


def cos(a: Tensor) -> Tensor:
    return _node(np.cos(a.data), (a,), lambda g: a._accumulate(-g * np.sin(a.data)), "cos")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: a._accumulate(g * (1.0 - t * t)), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def _bw(g):
        a._accumulate(g * (s * (1.0 + a.data * (1.0 - s))))

    return _node(a.data * s, (a,), _bw, "silu")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: a._accumulate(g * mask), "relu")


def absolute(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: a._accumulate(g * np.sign(a.data)), "abs")


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: a._accumulate(2.0 * g * a.data), "square")


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)

    def _bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r > 0, 0.5 / r, 0.0)
        a._accumulate(g * d)

    return _node(r, (a,), _bw, "sqrt")


# -------------------------------------------------------------- reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _node(np.array(a.data.sum()), (a,), lambda g: a._accumulate(np.broadcast_to(g, a.shape)), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        return Tensor(np.array(0.0))
    return _node(np.array(a.data.mean()), (a,), lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)), "mean")


def l2norm(tensors: Sequence[Tensor]) -> Tensor:
    """Euclidean norm of the concatenation of ``tensors`` (not squared).

    The gradient at the origin is taken as zero.
    """
    tensors = list(tensors)
    if not tensors:
        return Tensor(np.array(0.0))
    total = float(np.sqrt(np.add.reduce([np.vdot(t.data, t.data) for t in tensors])))

    def _bw(g):
        for t in tensors:
            t._accumulate(g * t.data / total if total else np.zeros(t.shape))

    return _node(np.array(total), tensors, _bw, "l2norm")


# ---------------------------------------------------------- feature slicing

def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")

    def _bw(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        a._accumulate(full)

    return _node(a.data[:, start:stop], (a,), _bw, "slice")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the feature axis."""
    tensors = list(tensors)
    rows = {t.shape[0] for t in tensors}
    if any(t.data.ndim != 2 for t in tensors) or len(rows) != 1:
        raise ShapeError(f"concat: need 2-D operands with equal rows, got {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t._accumulate(g[:, lo:hi])

    return _node(np.concatenate([t.data for t in tensors], axis=1), tensors, _bw, "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)), "reshape")


# ---------------------------------------------------------- custom mapping

def apply_rowwise(x: Tensor, values: np.ndarray, jacobian: np.ndarray, op: str = "function") -> Tensor:
    """Wrap an externally evaluated map ``f: R^k -> R`` applied to each row of ``x``.

    ``values`` has shape (batch, 1) and ``jacobian`` shape (batch, k) holding
    df/dx for each row. Used for closed-form functions whose derivatives are
    known analytically.
    """
    if values.shape != (x.shape[0], 1) or jacobian.shape != x.shape:
        raise ShapeError(f"{op}: values {values.shape} / jacobian {jacobian.shape} do not fit input {x.shape}")
    return _node(values, (x,), lambda g: x._accumulate(g * jacobian), op)


# --------------------------------------------------------------- backward

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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, leaves: Iterable[Tensor] = ()) -> None:
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``root``.

    ``leaves`` listed explicitly but unreachable receive a zero gradient.
    Intermediate gradients are released after use.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    for leaf in leaves:
        if leaf.requires_grad:
            leaf.grad = np.zeros(leaf.shape)
    if not root.requires_grad:
        return
    order = _topological(root)
    for node in order:
        if not node.is_leaf:
            node.grad = None
    root.grad = np.ones(root.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None
