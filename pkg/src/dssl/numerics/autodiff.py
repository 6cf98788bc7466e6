"""Reverse-mode automatic differentiation over 2-D float64 arrays.

Every value in a graph is a dense 2-D ``numpy`` array. Operations build
:class:`Node` objects that remember their parents and a closure that pushes
the output gradient back to them; :func:`backward` walks the graph in
reverse topological order.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..errors import NumericError, UsageError

EPS_NORM = 1e-12


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf",
                 requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise UsageError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


def constant(x, name=None) -> Node:
    """Wrap an array as a leaf that never receives a gradient."""
    if isinstance(x, Node):
        return x
    return Node(as_array(x), name=name)


def parameter(x, name=None) -> Node:
    return Node(np.array(as_array(x), copy=True), requires_grad=True, name=name)


def detach(x: Node) -> Node:
    """Gradient barrier: same value, no path back to ``x``."""
    return Node(x.value, name=x.name)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, backward_fn, op) -> Node:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {op}")
    requires = any(p.requires_grad for p in parents)
    return Node(value, parents if requires else (), backward_fn if requires else None,
                op, requires_grad=requires)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# --- elementwise ---------------------------------------------------------

def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), bw, "mul")


def scale(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)

    def bw(g):
        a._accumulate(g * c)

    return _make(a.value * c, (a,), bw, "scale")


def relu(a) -> Node:
    a = _wrap(a)
    mask = a.value > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.value, 0.0), (a,), bw, "relu")


def sqrt(a) -> Node:
    a = _wrap(a)
    out = np.sqrt(a.value)

    def bw(g):
        a._accumulate(g * 0.5 / out)

    return _make(out, (a,), bw, "sqrt")


# --- linear algebra / shape ----------------------------------------------

def matmul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def transpose(a) -> Node:
    a = _wrap(a)

    def bw(g):
        a._accumulate(g.T)

    return _make(a.value.T.copy(), (a,), bw, "transpose")


def hstack(parts: Sequence) -> Node:
    parts = [_wrap(p) for p in parts]
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.hstack([p.value for p in parts]), parts, bw, "hstack")


def diag(a) -> Node:
    """Main diagonal of a square matrix as a column."""
    a = _wrap(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise UsageError(f"diag needs a square matrix, got {a.shape}")
    idx = np.arange(n)

    def bw(g):
        full = np.zeros_like(a.value)
        full[idx, idx] = g[:, 0]
        a._accumulate(full)

    return _make(a.value[idx, idx].reshape(n, 1), (a,), bw, "diag")


# --- reductions ------------------------------------------------------------

def sum_(a, axis=None) -> Node:
    a = _wrap(a)
    if axis is None:
        out = np.array([[a.value.sum()]])
    else:
        out = a.value.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None) -> Node:
    a = _wrap(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def logsumexp(a, axis: int) -> Node:
    """Numerically stable log-sum-exp along ``axis`` (kept as size-1 dim)."""
    a = _wrap(a)
    m = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s

    def bw(g):
        a._accumulate(g * soft)

    return _make(out, (a,), bw, "logsumexp")


def frobenius_norm(a) -> Node:
    """``||a||_F``; the subgradient at zero is taken as zero."""
    a = _wrap(a)
    nrm = float(np.sqrt(np.sum(a.value * a.value)))

    def bw(g):
        if nrm > 0.0:
            a._accumulate(g[0, 0] * a.value / nrm)

    return _make(np.array([[nrm]]), (a,), bw, "frobenius")


def l2_normalize_rows(a, eps: float = EPS_NORM) -> Node:
    """Scale every row to unit length as ``x / (||x|| + eps)``.

    The stabilizer keeps all-zero rows finite (they stay zero).
    """
    return _normalize(a, 1, eps, "normalize_rows")


def l2_normalize_cols(a, eps: float = EPS_NORM) -> Node:
    return _normalize(a, 0, eps, "normalize_cols")


def _normalize(a, axis, eps, op) -> Node:
    a = _wrap(a)
    x = a.value
    r = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    d = r + eps
    y = x / d

    def bw(g):
        # d/dx [x/(r+eps)] applied to g: g/d - x * <g, x> / (r * d^2)
        gx = np.sum(g * x, axis=axis, keepdims=True)
        safe_r = np.where(r > 0, r, 1.0)
        corr = np.where(r > 0, gx / (safe_r * d * d), 0.0)
        a._accumulate(g / d - x * corr)

    return _make(y, (a,), bw, op)


# --- driver ---------------------------------------------------------------

def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, params: Iterable[Node] | None = None) -> list[np.ndarray] | None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    When ``params`` is given, their gradients are returned in order, with
    zeros for leaves that the loss does not depend on.
    """
    if loss.shape != (1, 1):
        raise UsageError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not np.isfinite(loss.value[0, 0]):
        raise NumericError("loss is not finite")
    order = _topo_order(loss)
    for node in order:
        if node.requires_grad:
            node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def zero_grads(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None

