"""DiSAN sentence encoder, its ablation variants, and the task heads."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AdditivePoolParams, MultiDimParams, additive_pool, source2token_pool
from .autodiff import Node, ParamGroup
from .disa import DisaBlockParams, disa_trace, make_mask
from .initializers import glorot_init, zeros
from .tensor import ShapeError, softmax_vector

VARIANTS = ("disan", "disan-no-direction", "wordemb-additive", "wordemb-s2t")
TASKS = ("nli", "classify")
NLI_CLASSES = 3


@dataclass
class EncoderParams:
    fw: DisaBlockParams
    bw: DisaBlockParams
    s2t: MultiDimParams
    directional: bool = True

    @classmethod
    def init(cls, d_e, d_h, rng, c=5.0, directional=True):
        return cls(
            fw=DisaBlockParams.init(d_e, d_h, rng, c=c),
            bw=DisaBlockParams.init(d_e, d_h, rng, c=c),
            s2t=MultiDimParams.init(2 * d_h, rng),
            directional=directional,
        )

    @property
    def out_dim(self):
        return 2 * self.fw.d_h

    @property
    def mask_kinds(self):
        return ("forward", "backward") if self.directional else ("diag", "diag")

    def groups(self, prefix=""):
        return self.fw.groups(prefix + "fw.") + self.bw.groups(prefix + "bw.") + self.s2t.groups(prefix + "s2t.")


@dataclass
class WordEmbeddingEncoder:
    """Baseline encoders that pool raw word embeddings with a single attention layer."""

    pool: AdditivePoolParams | MultiDimParams

    @property
    def out_dim(self):
        return self.pool.W1.value.shape[0]

    def groups(self, prefix=""):
        return self.pool.groups(prefix + "pool.")


@dataclass
class HeadParams:
    """Fully connected ELU layer followed by a softmax output layer."""

    Wfc: Node
    bfc: Node
    Wout: Node
    bout: Node

    @classmethod
    def init(cls, in_dim, num_classes, rng, hidden=300):
        if num_classes < 2:
            raise ValueError(f"a classifier needs at least 2 classes, got {num_classes}")
        return cls(
            Wfc=ad.leaf(glorot_init(hidden, in_dim, rng)),
            bfc=ad.leaf(zeros(hidden)),
            Wout=ad.leaf(glorot_init(num_classes, hidden, rng)),
            bout=ad.leaf(zeros(num_classes)),
        )

    @property
    def num_classes(self):
        return self.Wout.value.shape[0]

    def groups(self, prefix=""):
        return [
            ParamGroup(prefix + "Wfc", self.Wfc),
            ParamGroup(prefix + "bfc", self.bfc, regularized=False),
            ParamGroup(prefix + "Wout", self.Wout),
            ParamGroup(prefix + "bout", self.bout, regularized=False),
        ]


NliHeadParams = HeadParams
ClassifyHeadParams = HeadParams


class Dropout:
    """Samples inverted-dropout masks from a dedicated generator.

    ``keep_prob == 1`` or ``rng is None`` disables dropout (evaluation).
    """

    def __init__(self, keep_prob=1.0, rng=None):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.rng = rng

    @property
    def active(self):
        return self.rng is not None and self.keep_prob < 1.0

    def mask(self, shape):
        if not self.active:
            return None
        return (self.rng.random(shape) < self.keep_prob).astype(np.float64) / self.keep_prob

    def apply(self, node):
        m = self.mask(node.value.shape)
        return node if m is None else ad.dropout(node, m)


NO_DROPOUT = Dropout()


@dataclass
class EncodingTrace:
    encoding: Node
    blocks: tuple = ()
    s2t_probs: np.ndarray | None = None


def encode_trace(x, enc, dropout=NO_DROPOUT, fused=True):
    """Encode a ``d_e x n`` sentence and keep attention intermediates."""
    x = x if isinstance(x, Node) else ad.constant(x)
    if x.value.ndim != 2 or x.value.shape[1] < 1:
        raise ShapeError(f"cannot encode an empty sentence (input shape {x.value.shape})")
    x = dropout.apply(x)
    if isinstance(enc, WordEmbeddingEncoder):
        if isinstance(enc.pool, MultiDimParams):
            s, probs = source2token_pool(x, enc.pool, return_probs=True)
            return EncodingTrace(s, (), probs.value)
        return EncodingTrace(additive_pool(x, enc.pool))
    n = x.value.shape[1]
    blocks = []
    for params, kind in zip((enc.fw, enc.bw), enc.mask_kinds):
        hidden_mask = dropout.mask((params.d_h, n))
        blocks.append(disa_trace(x, params, make_mask(kind, n), hidden_mask, fused=fused))
    u = ad.concat_vertical(blocks[0].u, blocks[1].u)
    s, probs = source2token_pool(u, enc.s2t, return_probs=True)
    return EncodingTrace(s, tuple(blocks), probs.value)


def disan_encode(x, enc, dropout=NO_DROPOUT, fused=True):
    return encode_trace(x, enc, dropout, fused).encoding


def nli_features(sp, sh):
    """``[s_p; s_h; s_p - s_h; s_p * s_h]``."""
    return ad.concat([sp, sh, ad.sub(sp, sh), ad.mul(sp, sh)])


def head_logits(r, head, dropout=NO_DROPOUT):
    hidden = ad.elu(ad.add(ad.matmul(head.Wfc, r), head.bfc))
    hidden = dropout.apply(hidden)
    return ad.add(ad.matmul(head.Wout, hidden), head.bout)


def nli_logits(xp, xh, enc, head, dropout=NO_DROPOUT):
    sp = disan_encode(xp, enc, dropout)
    sh = disan_encode(xh, enc, dropout)
    return head_logits(nli_features(sp, sh), head, dropout)


def classify_logits(x, enc, head, dropout=NO_DROPOUT):
    return head_logits(disan_encode(x, enc, dropout), head, dropout)


def nli_predict(xp, xh, enc, head):
    return softmax_vector(nli_logits(xp, xh, enc, head).value)


def classify_predict(x, enc, head):
    return softmax_vector(classify_logits(x, enc, head).value)


def param_count(enc=None, head=None, include_embeddings=False, embedding=None):
    """Scalar parameter count; word embeddings only when ``include_embeddings``."""
    total = 0
    for part in (enc, head):
        if part is not None:
            total += sum(g.size for g in part.groups())
    if include_embeddings and embedding is not None:
        total += int(np.asarray(embedding.value if isinstance(embedding, Node) else embedding).size)
    return total


@dataclass
class ModelConfig:
    task: str = "nli"
    variant: str = "disan"
    d_e: int = 300
    d_h: int = 300
    num_classes: int = NLI_CLASSES
    head_hidden: int = 300
    c: float = 5.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.task == "nli" and self.num_classes != NLI_CLASSES:
            raise ValueError("the NLI head has exactly 3 classes")


def build_encoder(config, rng):
    if config.variant in ("disan", "disan-no-direction"):
        return EncoderParams.init(config.d_e, config.d_h, rng, c=config.c, directional=config.variant == "disan")
    if config.variant == "wordemb-s2t":
        return WordEmbeddingEncoder(MultiDimParams.init(config.d_e, rng))
    return WordEmbeddingEncoder(AdditivePoolParams.init(config.d_e, rng))


def build_head(config, enc_dim, rng):
    in_dim = 4 * enc_dim if config.task == "nli" else enc_dim
    return HeadParams.init(in_dim, config.num_classes, rng, hidden=config.head_hidden)


@dataclass
class Model:
    """Embedding table, sentence encoder and task head under one config."""

    config: ModelConfig
    embedding: Node
    encoder: EncoderParams | WordEmbeddingEncoder
    head: HeadParams
    frozen_embeddings: bool = False
    extras: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config, embedding, rng):
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape[0] != config.d_e:
            raise ShapeError(f"embedding rows are {embedding.shape[0]}-dim, config says d_e={config.d_e}")
        enc = build_encoder(config, rng)
        head = build_head(config, enc.out_dim, rng)
        return cls(config, ad.leaf(embedding.copy(), name="embedding"), enc, head)

    def param_groups(self, include_embeddings=True):
        groups = self.encoder.groups("encoder.") + self.head.groups("head.")
        if include_embeddings and not self.frozen_embeddings:
            groups.append(ParamGroup("embedding", self.embedding, regularized=False))
        return groups

    def named_tensors(self):
        """Every persistent tensor, embeddings included, keyed by name."""
        out = {g.name: g.tensor for g in self.encoder.groups("encoder.") + self.head.groups("head.")}
        out["embedding"] = self.embedding
        return out

    def param_count(self, include_embeddings=False):
        return param_count(self.encoder, self.head, include_embeddings, self.embedding)

    def embed(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError(f"expected a non-empty 1-D token id sequence, got shape {ids.shape}")
        return ad.columns(self.embedding, ids)

    def encode(self, ids, dropout=NO_DROPOUT):
        return disan_encode(self.embed(ids), self.encoder, dropout)

    def trace(self, ids):
        return encode_trace(self.embed(ids), self.encoder)

    def logits(self, example, dropout=NO_DROPOUT):
        """``example`` is a token-id sequence, or a ``(premise, hypothesis)`` pair for NLI."""
        if self.config.task == "nli":
            premise, hypothesis = example
            r = nli_features(self.encode(premise, dropout), self.encode(hypothesis, dropout))
        else:
            r = self.encode(example, dropout)
        return head_logits(r, self.head, dropout)

    def predict_proba(self, example):
        return softmax_vector(self.logits(example).value)
