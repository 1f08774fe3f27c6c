"""Reverse-mode differentiation over float64 numpy tensors.

A :class:`Node` holds a value, its adjoint and a closure that pushes the
adjoint to its parents. Graphs are built eagerly by the op functions below
and consumed by :func:`backward`.

Adjoints of leaf nodes accumulate across a backward pass and must be reset
with :meth:`Node.zero_grad` before the next one; running backward over a
leaf that still carries an unreset adjoint raises :class:`GradientError`.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import DTYPE, NEG_INF, ShapeError, elu as _elu, masked_softmax as _masked_softmax
from .tensor import sigmoid as _sigmoid


class GradientError(RuntimeError):
    """Misuse of the differentiation engine (non-scalar root, stale adjoints)."""


class Node:
    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad", "name", "_dirty", "_consumed", "cache")

    def __init__(self, value, parents=(), backward=None, requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None
        self._dirty = False
        self._consumed = False
        self.cache = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self):
        self._grad = None
        self._dirty = False

    def _accumulate(self, g):
        if self._grad is None:
            self._grad = np.array(g, dtype=DTYPE, copy=True).reshape(self.value.shape)
        else:
            self._grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"


def leaf(value, name=None, requires_grad=True):
    return Node(value, requires_grad=requires_grad, name=name)


def constant(value):
    return Node(value, requires_grad=False)


def _wrap(x):
    return x if isinstance(x, Node) else constant(x)


def _topo_order(root):
    order, seen = [], set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Populate adjoints of every node reachable from the scalar ``root``."""
    if root.value.size != 1 or root.value.ndim > 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.value.shape}")
    if root._consumed:
        raise GradientError("backward already ran on this graph")
    order = _topo_order(root)
    for node in order:
        if not node.parents and node._dirty:
            raise GradientError(f"leaf {node!r} holds an unreset adjoint; call zero_grad() first")
    root._consumed = True
    root._accumulate(np.ones_like(root.value))
    for node in reversed(order):
        if node._backward is not None and node._grad is not None:
            node._backward(node._grad)
        if not node.parents:
            node._dirty = True


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 1 and g.ndim == 2:
        return g.sum(axis=1)
    if len(shape) == 0:
        return g.sum()
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _binary_shapes(a, b, opname):
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return a.value, b.value
    if len(sb) == 1 and len(sa) == 2 and sa[0] == sb[0]:
        return a.value, b.value[:, None]
    if len(sb) == 0:
        return a.value, b.value
    raise ShapeError(f"{opname}: shapes {sa} and {sb} do not broadcast")


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = _binary_shapes(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.value.shape))

    return Node(av + bv, (a, b), bw)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = _binary_shapes(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.value.shape))

    return Node(av - bv, (a, b), bw)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = _binary_shapes(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * bv)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * av, b.value.shape))

    return Node(av * bv, (a, b), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        a._accumulate(g * c)

    return Node(a.value * c, (a,), bw)


def one_minus(a):
    def bw(g):
        a._accumulate(-g)

    return Node(1.0 - a.value, (a,), bw)


def tanh(a):
    out = np.tanh(a.value)

    def bw(g):
        a._accumulate(g * (1.0 - out * out))

    return Node(out, (a,), bw)


def sigmoid(a):
    out = _sigmoid(a.value)

    def bw(g):
        a._accumulate(g * out * (1.0 - out))

    return Node(out, (a,), bw)


def elu(a):
    x = a.value
    out = _elu(x)

    def bw(g):
        # derivative 1 at the kink, right-continuous
        a._accumulate(g * np.where(x >= 0, 1.0, out + 1.0))

    return Node(out, (a,), bw)


def identity(a):
    return a


ACTIVATIONS = {"elu": elu, "tanh": tanh, "sigmoid": sigmoid, "identity": identity}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def dropout(a, mask):
    """Multiply by a fixed mask; the mask lives on the node for reuse in backward."""
    mask = np.asarray(mask, dtype=DTYPE)

    def bw(g):
        a._accumulate(g * mask)

    out = Node(a.value * mask, (a,), bw)
    out.cache = mask
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(np.outer(g, bv) if bv.ndim == 1 else g @ bv.T)
        if b.requires_grad:
            b._accumulate(av.T @ g)

    return Node(av @ bv, (a, b), bw)


def transpose(a):
    def bw(g):
        a._accumulate(g.T)

    return Node(a.value.T, (a,), bw)


def reshape(a, shape):
    def bw(g):
        a._accumulate(g.reshape(a.value.shape))

    return Node(a.value.reshape(shape), (a,), bw)


def total(a):
    def bw(g):
        a._accumulate(np.broadcast_to(g, a.value.shape))

    return Node(a.value.sum(), (a,), bw)


def sum_axis(a, axis):
    def bw(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

    return Node(a.value.sum(axis=axis), (a,), bw)


def squared_norm(a):
    x = a.value

    def bw(g):
        a._accumulate(2.0 * g * x)

    return Node(np.sum(x * x), (a,), bw)


def concat(nodes, axis=0):
    nodes = [_wrap(n) for n in nodes]
    values = [n.value for n in nodes]
    sizes = [v.shape[axis] for v in values]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[v.shape for v in values]}") from exc
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            if n.requires_grad:
                n._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return Node(out, nodes, bw)


def concat_vertical(a, b):
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"concat_vertical: token axes differ, {a.value.shape} vs {b.value.shape}")
    return concat([a, b], axis=0)


def columns(table, index):
    """Gather columns ``table[:, index]``; backward scatter-adds into the table."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        acc = np.zeros_like(table.value)
        np.add.at(acc.T, index, g.T)
        table._accumulate(acc)

    return Node(table.value[:, index], (table,), bw)


# ---------------------------------------------------------------- attention pieces


def masked_softmax(scores, mask=None, axis=-1):
    p = _masked_softmax(scores.value, mask, axis=axis)

    def bw(g):
        inner = np.sum(g * p, axis=axis, keepdims=True)
        scores._accumulate(p * (g - inner))

    return Node(p, (scores,), bw)


def pairwise_sum(a, b):
    """``out[k, i, j] = a[k, i] + b[k, j]`` for two ``d x n`` nodes."""
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape or a.value.ndim != 2:
        raise ShapeError(f"pairwise_sum: {a.value.shape} vs {b.value.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=2))
        if b.requires_grad:
            b._accumulate(g.sum(axis=1))

    return Node(a.value[:, :, None] + b.value[:, None, :], (a, b), bw)


def add_mask(scores, mask):
    """Add a constant ``n x n`` mask across every feature of ``d x n x n`` scores."""
    mask = np.asarray(mask, dtype=DTYPE)

    def bw(g):
        scores._accumulate(np.where(np.isfinite(mask), g, 0.0))

    return Node(scores.value + mask[None, :, :], (scores,), bw)


def weighted_sum(probs, values):
    """Feature-wise expectation of ``values`` (``d x n``) under ``probs``.

    ``probs`` of shape ``d x n`` gives ``s[k] = sum_i P[k, i] x[k, i]``;
    shape ``d x n x n`` (indexed ``[k, i, j]``) gives ``s[k, j]``.
    """
    P, X = probs.value, values.value
    if P.ndim == 2:
        if P.shape != X.shape:
            raise ShapeError(f"weighted_sum: {P.shape} vs {X.shape}")
        out = np.sum(P * X, axis=1)

        def bw(g):
            if probs.requires_grad:
                probs._accumulate(g[:, None] * X)
            if values.requires_grad:
                values._accumulate(g[:, None] * P)

    else:
        if P.shape != X.shape + (X.shape[1],):
            raise ShapeError(f"weighted_sum: {P.shape} vs {X.shape}")
        out = np.einsum("kij,ki->kj", P, X)

        def bw(g):
            if probs.requires_grad:
                probs._accumulate(X[:, :, None] * g[:, None, :])
            if values.requires_grad:
                values._accumulate(np.einsum("kij,kj->ki", P, g))

    return Node(out, (probs, values), bw)


def directional_attention(a, b, bias, values, mask, c):
    """Fused masked scaled-tanh token2token attention.

    Given ``a = W1 h`` and ``b = W2 h`` (both ``d x n``), scores are
    ``c * tanh((a_i + b_j + bias) / c) + M[i, j]``; a per-feature softmax
    over ``i`` weights ``values`` into ``s_j``. The probabilities ``[k, i, j]``
    are kept on ``out.cache`` for inspection.
    """
    mask = np.ascontiguousarray(mask, dtype=DTYPE)
    n = a.value.shape[1]
    if mask.shape != (n, n):
        raise ShapeError(f"mask of shape {mask.shape} does not fit {n} tokens")
    for node in (b, values):
        if node.value.shape != a.value.shape:
            raise ShapeError(f"directional_attention: {node.value.shape} vs {a.value.shape}")
    s, probs, th = kernels.t2t_forward(a.value, b.value, bias.value, values.value, mask, float(c))

    def bw(g):
        ga, gb, gbias, gv = kernels.t2t_backward(np.ascontiguousarray(g), probs, th, values.value)
        if a.requires_grad:
            a._accumulate(ga)
        if b.requires_grad:
            b._accumulate(gb)
        if bias.requires_grad:
            bias._accumulate(gbias)
        if values.requires_grad:
            values._accumulate(gv)

    out = Node(s, (a, b, bias, values), bw)
    out.cache = probs
    return out


# ---------------------------------------------------------------- losses


def log_softmax(logits):
    z = logits.value
    shifted = z - np.max(z)
    lse = np.log(np.sum(np.exp(shifted)))
    out = shifted - lse

    def bw(g):
        logits._accumulate(g - np.exp(out) * np.sum(g))

    return Node(out, (logits,), bw)


def pick(a, index):
    def bw(g):
        acc = np.zeros_like(a.value)
        acc[index] = g
        a._accumulate(acc)

    return Node(a.value[index], (a,), bw)


# ---------------------------------------------------------------- gradient check


@dataclass
class ParamGroup:
    name: str
    tensor: Node
    regularized: bool = True

    @property
    def size(self):
        return int(self.tensor.value.size)


def grad_check_report(loss_fn, params, epsilon=1e-5):
    """Central-difference check of the adjoints of every entry of ``params``.

    ``loss_fn`` is called with no arguments and must rebuild the graph from
    the current parameter values. Returns ``{name: max relative error}``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    for p in params:
        p.tensor.zero_grad()
    root = loss_fn()
    if not np.isfinite(root.value).all():
        raise FloatingPointError("loss is not finite")
    backward(root)
    report = {}
    for p in params:
        theta = p.tensor.value
        adjoint = p.tensor.grad.copy()
        flat = theta.reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + epsilon
            up = float(loss_fn().value)
            flat[idx] = saved - epsilon
            down = float(loss_fn().value)
            flat[idx] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"loss is not finite while perturbing {p.name}[{idx}]")
            d = (up - down) / (2.0 * epsilon)
            a = adjoint.reshape(-1)[idx]
            err = abs(a - d) / max(abs(a), abs(d), 1e-8)
            worst = max(worst, err)
        report[p.name] = worst
    for p in params:
        p.tensor.zero_grad()
    return report


def grad_check(loss_fn, params, epsilon=1e-5):
    report = grad_check_report(loss_fn, params, epsilon)
    return max(report.values(), default=0.0)


__all__ = [
    "NEG_INF",
    "GradientError",
    "Node",
    "ParamGroup",
    "backward",
    "grad_check",
    "grad_check_report",
]
