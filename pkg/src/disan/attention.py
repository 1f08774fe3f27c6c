"""Additive, multiplicative and multi-dimensional attention, plus the two
multi-dimensional self-attention poolers (token2token and source2token).

Every function accepts autodiff nodes or plain arrays and returns a node, so
the same code path serves inference and gradient computation.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamGroup
from .initializers import glorot_init, zeros
from .tensor import ShapeError


def _node(x):
    return x if isinstance(x, Node) else ad.constant(x)


@dataclass
class AdditiveParams:
    W1: Node
    W2: Node
    w: Node
    activation: str = "elu"

    def groups(self, prefix=""):
        return [
            ParamGroup(prefix + "W1", self.W1),
            ParamGroup(prefix + "W2", self.W2),
            ParamGroup(prefix + "w", self.w),
        ]


@dataclass
class MultiDimParams:
    """Parameters of multi-dimensional attention over ``d``-dim tokens.

    ``W2`` scores the query and is ``None`` for source2token pooling, which
    has no query.
    """

    W: Node
    W1: Node
    b1: Node
    b: Node
    W2: Node | None = None
    activation: str = "elu"

    @property
    def dim(self):
        return self.W.value.shape[0]

    @classmethod
    def init(cls, dim, rng, with_query=False, activation="elu"):
        return cls(
            W=ad.leaf(glorot_init(dim, dim, rng)),
            W1=ad.leaf(glorot_init(dim, dim, rng)),
            b1=ad.leaf(zeros(dim)),
            b=ad.leaf(zeros(dim)),
            W2=ad.leaf(glorot_init(dim, dim, rng)) if with_query else None,
            activation=activation,
        )

    def groups(self, prefix=""):
        out = [ParamGroup(prefix + "W", self.W), ParamGroup(prefix + "W1", self.W1)]
        if self.W2 is not None:
            out.append(ParamGroup(prefix + "W2", self.W2))
        out += [
            ParamGroup(prefix + "b1", self.b1, regularized=False),
            ParamGroup(prefix + "b", self.b, regularized=False),
        ]
        return out


def additive_score(x_i, q, p):
    """Scalar compatibility ``w^T act(W1 x_i + W2 q)``."""
    x_i, q = _node(x_i), _node(q)
    act = ad.activation(p.activation)
    hidden = act(ad.add(ad.matmul(p.W1, x_i), ad.matmul(p.W2, q)))
    if hidden.value.shape != p.w.value.shape:
        raise ShapeError(f"additive_score: w has shape {p.w.value.shape}, hidden {hidden.value.shape}")
    return ad.total(ad.mul(p.w, hidden))


def multiplicative_score(x_i, q, W1, W2):
    """Inner product ``<W1 x_i, W2 q>``."""
    a = ad.matmul(_node(W1), _node(x_i))
    b = ad.matmul(_node(W2), _node(q))
    if a.value.shape != b.value.shape:
        raise ShapeError(f"multiplicative_score: projections {a.value.shape} and {b.value.shape} differ")
    return ad.total(ad.mul(a, b))


def multidim_score(x_i, q, p):
    """Feature-wise score vector ``W^T act(W1 x_i + W2 q + b1) + b``."""
    if p.W2 is None:
        raise ValueError("multidim_score needs query weights W2")
    x_i, q = _node(x_i), _node(q)
    act = ad.activation(p.activation)
    inner = ad.add(ad.add(ad.matmul(p.W1, x_i), ad.matmul(p.W2, q)), p.b1)
    return ad.add(ad.matmul(ad.transpose(p.W), act(inner)), p.b)


def source2token_scores(x, p, include_bias=True):
    """``W^T act(W1 x_i + b1) + b`` for every column ``x_i`` of ``x``."""
    x = _node(x)
    act = ad.activation(p.activation)
    hidden = act(ad.add(ad.matmul(p.W1, x), p.b1))
    scores = ad.matmul(ad.transpose(p.W), hidden)
    return ad.add(scores, p.b) if include_bias else scores


def source2token_pool(x, p, return_probs=False):
    """Compress ``d x n`` tokens into one ``d`` vector by feature-wise attention."""
    x = _node(x)
    if x.value.ndim != 2 or x.value.shape[1] == 0:
        raise ShapeError(f"source2token_pool needs at least one token, got shape {x.value.shape}")
    # b is constant along the token axis and cancels in the softmax; leaving
    # it out makes its gradient exactly zero instead of rounding noise
    probs = ad.masked_softmax(source2token_scores(x, p, include_bias=False), axis=1)
    s = ad.weighted_sum(probs, x)
    return (s, probs) if return_probs else s


def token2token_scores(x, p, extra_bias=None, include_bias=True):
    """Score tensor ``[k, i, j]`` of ``x_i`` against query ``x_j``, plus ``extra_bias[i, j]``."""
    x = _node(x)
    d, n = x.value.shape
    act = ad.activation(p.activation)
    pre = ad.pairwise_sum(ad.matmul(p.W1, x), ad.matmul(p.W2, x))
    flat = ad.add(ad.reshape(pre, (d, n * n)), p.b1)
    scores = ad.matmul(ad.transpose(p.W), act(flat))
    if include_bias:
        scores = ad.add(scores, p.b)
    scores = ad.reshape(scores, (d, n, n))
    if extra_bias is not None:
        extra_bias = np.asarray(extra_bias, dtype=np.float64)
        if extra_bias.shape != (n, n):
            raise ShapeError(f"extra_bias must be {n}x{n}, got {extra_bias.shape}")
        scores = ad.add_mask(scores, extra_bias)
    return scores


def token2token_pool(x, p, extra_bias=None, return_probs=False):
    """Context-aware ``d x n`` output: ``s_j = sum_i P^j[:, i] * x_i``."""
    x = _node(x)
    # as in source2token_pool, b cancels along the attended-token axis
    probs = ad.masked_softmax(token2token_scores(x, p, extra_bias, include_bias=False), axis=1)
    s = ad.weighted_sum(probs, x)
    return (s, probs) if return_probs else s


@dataclass
class AdditivePoolParams:
    """Query-free additive attention: one scalar score per token."""

    W1: Node
    b1: Node
    w: Node
    activation: str = "elu"

    @classmethod
    def init(cls, dim, rng, activation="elu"):
        return cls(
            W1=ad.leaf(glorot_init(dim, dim, rng)),
            b1=ad.leaf(zeros(dim)),
            w=ad.leaf(glorot_init(1, dim, rng).reshape(dim)),
            activation=activation,
        )

    def groups(self, prefix=""):
        return [
            ParamGroup(prefix + "W1", self.W1),
            ParamGroup(prefix + "b1", self.b1, regularized=False),
            ParamGroup(prefix + "w", self.w),
        ]


def additive_pool(x, p):
    """Token-wise attention pooling: scores ``w^T act(W1 x_i + b1)`` shared by all features."""
    x = _node(x)
    act = ad.activation(p.activation)
    scores = ad.matmul(ad.reshape(p.w, (1, -1)), act(ad.add(ad.matmul(p.W1, x), p.b1)))
    probs = ad.masked_softmax(scores, axis=1)
    weights = ad.matmul(ad.constant(np.ones((x.value.shape[0], 1))), probs)
    return ad.weighted_sum(weights, x)
