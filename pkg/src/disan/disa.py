"""Directional self-attention block.

A block lifts tokens with a fully connected ELU layer, runs masked
multi-dimensional token2token attention with scaled-tanh scores, and mixes
attention output and hidden state through a sigmoid fusion gate.

Mask convention: ``M[i, j]`` is added to the score of token ``i`` attended
by query token ``j``. Columns index queries, so the softmax for ``s_j`` runs
down column ``j``.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamGroup
from .initializers import glorot_init, zeros
from .tensor import NEG_INF, ShapeError

MASK_KINDS = ("diag", "forward", "backward", "none")


@dataclass(frozen=True)
class PositionalMask:
    kind: str
    matrix: np.ndarray

    @property
    def n(self):
        return self.matrix.shape[0]


def make_mask(kind, n, length=None):
    """Build an ``n x n`` additive mask of the given kind.

    With ``length < n``, positions ``>= length`` are padding and are masked
    both as attended tokens (rows) and as queries (columns).
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    if n < 1:
        raise ValueError(f"mask needs n >= 1, got {n}")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    allowed = {
        "diag": i != j,
        "forward": i < j,
        "backward": i > j,
        "none": np.ones((n, n), dtype=bool),
    }[kind]
    if length is not None:
        allowed = allowed & (i < length) & (j < length)
    matrix = np.where(allowed, 0.0, NEG_INF)
    matrix.setflags(write=False)
    return PositionalMask(kind, matrix)


@dataclass
class DisaBlockParams:
    Wh: Node
    bh: Node
    W1: Node
    W2: Node
    b1: Node
    Wf1: Node
    Wf2: Node
    bf: Node
    c: float = 5.0

    @property
    def d_h(self):
        return self.Wh.value.shape[0]

    @classmethod
    def init(cls, d_e, d_h, rng, c=5.0):
        return cls(
            Wh=ad.leaf(glorot_init(d_h, d_e, rng)),
            bh=ad.leaf(zeros(d_h)),
            W1=ad.leaf(glorot_init(d_h, d_h, rng)),
            W2=ad.leaf(glorot_init(d_h, d_h, rng)),
            b1=ad.leaf(zeros(d_h)),
            Wf1=ad.leaf(glorot_init(d_h, d_h, rng)),
            Wf2=ad.leaf(glorot_init(d_h, d_h, rng)),
            bf=ad.leaf(zeros(d_h)),
            c=c,
        )

    def groups(self, prefix=""):
        return [
            ParamGroup(prefix + "Wh", self.Wh),
            ParamGroup(prefix + "bh", self.bh, regularized=False),
            ParamGroup(prefix + "W1", self.W1),
            ParamGroup(prefix + "W2", self.W2),
            ParamGroup(prefix + "b1", self.b1, regularized=False),
            ParamGroup(prefix + "Wf1", self.Wf1),
            ParamGroup(prefix + "Wf2", self.Wf2),
            ParamGroup(prefix + "bf", self.bf, regularized=False),
        ]


class BlockTrace(NamedTuple):
    u: Node
    h: Node
    s: Node
    gate: Node
    probs: np.ndarray


def _mask_matrix(m, n):
    matrix = m.matrix if isinstance(m, PositionalMask) else np.asarray(m, dtype=np.float64)
    if matrix.shape != (n, n):
        raise ShapeError(f"mask of shape {matrix.shape} does not fit {n} tokens")
    return matrix


def disa_scores(h, p, m):
    """Masked score tensor ``[k, i, j] = c tanh((W1 h_i + W2 h_j + b1) / c) + M[i, j]``."""
    h = h if isinstance(h, Node) else ad.constant(h)
    d, n = h.value.shape
    mask = _mask_matrix(m, n)
    pre = ad.pairwise_sum(ad.matmul(p.W1, h), ad.matmul(p.W2, h))
    pre = ad.reshape(ad.add(ad.reshape(pre, (d, n * n)), p.b1), (d, n, n))
    scores = ad.scale(ad.tanh(ad.scale(pre, 1.0 / p.c)), p.c)
    return ad.add_mask(scores, mask)


def fusion_gate(s, h, p):
    """Return ``(u, F)`` with ``F = sigmoid(Wf1 s + Wf2 h + bf)`` and ``u = F h + (1 - F) s``."""
    if s.value.shape != h.value.shape:
        raise ShapeError(f"fusion_gate: s {s.value.shape} vs h {h.value.shape}")
    gate = ad.sigmoid(ad.add(ad.add(ad.matmul(p.Wf1, s), ad.matmul(p.Wf2, h)), p.bf))
    u = ad.add(ad.mul(gate, h), ad.mul(ad.one_minus(gate), s))
    return u, gate


def disa_trace(x, p, m, hidden_dropout=None, fused=True):
    """Run one block and keep its intermediates.

    ``hidden_dropout`` is an optional mask multiplied into ``h``. With
    ``fused=False`` the attention is assembled from generic autodiff ops
    instead of the fused kernel; both routes compute the same function.
    """
    x = x if isinstance(x, Node) else ad.constant(x)
    if x.value.ndim != 2 or x.value.shape[1] < 1:
        raise ShapeError(f"disa_block needs a d_e x n input with n >= 1, got {x.value.shape}")
    n = x.value.shape[1]
    mask = _mask_matrix(m, n)
    h = ad.elu(ad.add(ad.matmul(p.Wh, x), p.bh))
    if hidden_dropout is not None:
        h = ad.dropout(h, hidden_dropout)
    if fused:
        s = ad.directional_attention(ad.matmul(p.W1, h), ad.matmul(p.W2, h), p.b1, h, mask, p.c)
        probs = s.cache
    else:
        prob_node = ad.masked_softmax(disa_scores(h, p, mask), axis=1)
        s = ad.weighted_sum(prob_node, h)
        probs = prob_node.value
    u, gate = fusion_gate(s, h, p)
    return BlockTrace(u, h, s, gate, probs)


def disa_block(x, p, m, hidden_dropout=None, fused=True):
    return disa_trace(x, p, m, hidden_dropout, fused).u
