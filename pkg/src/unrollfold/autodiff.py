"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every operation builds a :class:`Node` holding its value and a closure that
maps the output adjoint to operand adjoints.  :func:`backward` sorts the graph
reachable from a scalar root into a :class:`Tape` and sweeps it once in
reverse.  Leaf adjoints accumulate across calls (``zero_grad`` resets them),
which is what per-sequence gradient accumulation during training relies on.

Broadcasting is deliberately narrow: a shape-``()`` operand may meet any
array in the elementwise ops; everything else must match exactly.  Row and
column replication are explicit (:func:`outer_ones`, :func:`tile_rows`).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "op", "parents", "vjp", "requires_grad", "_spent")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node's reflected ops

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad
        self._spent = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __pow__(self, n): return powi(self, n)

    @property
    def T(self):
        return transpose(self)


def leaf(value) -> Node:
    """A differentiable input."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def const(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _make(op, value, parents, vjp):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Node(value, op=op)
    return Node(value, requires_grad=True, op=op, parents=parents, vjp=vjp)


def _unbroadcast(g, shape):
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def _binary_shapes(op, a, b):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    a, b = const(a), const(b)
    _binary_shapes("add", a, b)
    return _make("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = const(a), const(b)
    _binary_shapes("sub", a, b)
    return _make("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = const(a), const(b)
    _binary_shapes("mul", a, b)
    av, bv = a.value, b.value
    return _make("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a, b) -> Node:
    a, b = const(a), const(b)
    _binary_shapes("div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bv, a.shape),
                            _unbroadcast(-g * out / bv, b.shape)))


def neg(a) -> Node:
    a = const(a)
    return _make("neg", -a.value, (a,), lambda g: (-g,))


def powi(a, n: int) -> Node:
    """Integer power ``a**n`` with ``n >= 0`` (used for step decays ``gamma**t``)."""
    if int(n) != n or n < 0:
        raise ValueError("powi needs a nonnegative integer exponent")
    n = int(n)
    a = const(a)
    av = a.value
    if n == 0:
        return _make("powi", np.ones_like(av), (a,), lambda g: (np.zeros_like(av),))
    return _make("powi", av ** n, (a,), lambda g: (g * n * av ** (n - 1),))


def relu(a) -> Node:
    a = const(a)
    pos = a.value > 0
    return _make("relu", np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def abs_(a) -> Node:
    a = const(a)
    sgn = np.sign(a.value)
    return _make("abs", np.abs(a.value), (a,), lambda g: (g * sgn,))


def exp(a) -> Node:
    a = const(a)
    out = np.exp(a.value)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = const(a)
    av = a.value
    return _make("log", np.log(av), (a,), lambda g: (g / av,))


def sigmoid(a) -> Node:
    a = const(a)
    s = expit(a.value)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a) -> Node:
    """``log(sigmoid(a))`` without underflow for large negative ``a``."""
    a = const(a)
    av = a.value
    return _make("log_sigmoid", -np.logaddexp(0.0, -av), (a,), lambda g: (g * expit(-av),))


def softsign(a, k: float) -> Node:
    """Smoothed step ``1 / (1 + exp(-k a))``; ``k`` is a fixed temperature."""
    a = const(a)
    s = expit(k * a.value)
    return _make("softsign", s, (a,), lambda g: (g * k * s * (1.0 - s),))


def clip_max1(a) -> Node:
    """``1 - relu(1 - a)``, i.e. ``min(a, 1)``; zero slope at exactly 1."""
    a = const(a)
    below = a.value < 1.0
    return _make("clip_max1", np.minimum(a.value, 1.0), (a,), lambda g: (g * below,))


# ---------------------------------------------------------------- linear algebra

def _need2d(op, *nodes):
    for n in nodes:
        if n.value.ndim != 2:
            raise ShapeError(f"{op}: expected a matrix, got shape {n.shape}")


def matmul(a, b) -> Node:
    a, b = const(a), const(b)
    _need2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a) -> Node:
    a = const(a)
    _need2d("transpose", a)
    return _make("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def row_sum(a) -> Node:
    """``A @ 1``: matrix to column vector (returned as shape ``(n,)``)."""
    a = const(a)
    _need2d("row_sum", a)
    m = a.shape[1]
    return _make("row_sum", a.value.sum(axis=1), (a,),
                 lambda g: (np.repeat(g[:, None], m, axis=1),))


def full_sum(a) -> Node:
    a = const(a)
    shape = a.shape
    return _make("full_sum", np.asarray(a.value.sum()), (a,),
                 lambda g: (np.full(shape, float(g)),))


def inner_product(a, b) -> Node:
    a, b = const(a), const(b)
    if a.shape != b.shape:
        raise ShapeError(f"inner_product: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _make("inner_product", np.asarray((av * bv).sum()), (a, b),
                 lambda g: (g * bv, g * av))


def outer_ones(v, n: int) -> Node:
    """``v 1ᵀ``: column vector ``(L,)`` replicated into ``n`` columns."""
    v = const(v)
    if v.value.ndim != 1:
        raise ShapeError(f"outer_ones: expected a vector, got {v.shape}")
    return _make("outer_ones", np.repeat(v.value[:, None], n, axis=1), (v,),
                 lambda g: (g.sum(axis=1),))


def tile_rows(v, n: int) -> Node:
    """``1 vᵀ``: row vector ``(d,)`` replicated into ``n`` rows (bias add)."""
    v = const(v)
    if v.value.ndim != 1:
        raise ShapeError(f"tile_rows: expected a vector, got {v.shape}")
    return _make("tile_rows", np.repeat(v.value[None, :], n, axis=0), (v,),
                 lambda g: (g.sum(axis=0),))


def concat_rows(nodes: Sequence) -> Node:
    nodes = [const(n) for n in nodes]
    _need2d("concat_rows", *nodes)
    widths = {n.shape[1] for n in nodes}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(widths)}")
    cuts = np.cumsum([n.shape[0] for n in nodes])[:-1]
    return _make("concat_rows", np.concatenate([n.value for n in nodes], axis=0), tuple(nodes),
                 lambda g: tuple(np.split(g, cuts, axis=0)))


def concat_cols(nodes: Sequence) -> Node:
    nodes = [const(n) for n in nodes]
    _need2d("concat_cols", *nodes)
    heights = {n.shape[0] for n in nodes}
    if len(heights) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(heights)}")
    cuts = np.cumsum([n.shape[1] for n in nodes])[:-1]
    return _make("concat_cols", np.concatenate([n.value for n in nodes], axis=1), tuple(nodes),
                 lambda g: tuple(np.split(g, cuts, axis=1)))


def softmax_rows(a) -> Node:
    a = const(a)
    _need2d("softmax_rows", a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return _make("softmax_rows", s, (a,),
                 lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def pairwise_sum(a, b) -> Node:
    """Row ``i*L + j`` of the ``(L*L, d)`` result is ``a[i] + b[j]``.

    This is the first 1x1 layer over the pairwise concatenation ``[x_i, x_j]``
    split into its two halves, without materialising the ``L x L x 2d`` tensor.
    """
    a, b = const(a), const(b)
    _need2d("pairwise_sum", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"pairwise_sum: {a.shape} vs {b.shape}")
    L, d = a.shape
    out = (a.value[:, None, :] + b.value[None, :, :]).reshape(L * L, d)

    def vjp(g):
        g3 = g.reshape(L, L, d)
        return g3.sum(axis=1), g3.sum(axis=0)

    return _make("pairwise_sum", out, (a, b), vjp)


def reshape(a, shape) -> Node:
    a = const(a)
    old = a.shape
    return _make("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- backward

class Tape:
    """Topologically ordered nodes feeding one scalar root."""

    def __init__(self, root: Node):
        self.root = root
        self.nodes = self._toposort(root)

    @staticmethod
    def _toposort(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        for n in self.nodes:
            if not n.is_leaf:
                n.grad = np.zeros_like(n.value)
        self.root.grad = np.ones_like(self.root.value)
        for n in reversed(self.nodes):
            if n.is_leaf:
                continue
            for p, g in zip(n.parents, n.vjp(n.grad)):
                if not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(g, dtype=np.float64)
                else:
                    p.grad = p.grad + g


def backward(root: Node) -> None:
    """Populate ``.grad`` on every differentiable leaf below ``root``.

    Raises if ``root`` is not a scalar or has already been differentiated.
    """
    if root.value.shape != ():
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if root._spent:
        raise RuntimeError("backward already ran on this graph; rebuild it")
    if root.requires_grad:
        Tape(root).backward()
    root._spent = True


# ---------------------------------------------------------------- checking

def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    floor = max(1e-3 * scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max(initial=0.0))


def check_gradient(f: Callable, x, eps: float = 1e-5, tol: float | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps one node (or, if ``x`` is a list/tuple of arrays, that many
    nodes) to a scalar node.  Coordinates whose gradient is below 0.1% of the
    largest are compared against that 0.1% level rather than themselves, so
    finite-difference roundoff on zero gradients does not dominate.  If
    ``tol`` is given an ``AssertionError`` is raised when it is exceeded.
    """
    multi = isinstance(x, (list, tuple))
    xs = [np.array(v, dtype=np.float64) for v in (x if multi else [x])]

    leaves = [leaf(v) for v in xs]
    out = f(*leaves)
    backward(out)
    analytic = [l.grad if l.grad is not None else np.zeros_like(l.value) for l in leaves]

    def value(vals):
        return float(f(*[const(v) for v in vals]).value)

    worst = 0.0
    for k, base in enumerate(xs):
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus = [v.copy() for v in xs]
            minus = [v.copy() for v in xs]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            numeric[idx] = (value(plus) - value(minus)) / (2 * eps)
        worst = max(worst, _rel_err(analytic[k], numeric))
    if tol is not None and worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
