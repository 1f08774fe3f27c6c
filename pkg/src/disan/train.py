"""Objective, Adadelta updates and the epoch loop."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import PAD_ID, make_batches
from .initializers import dropout_mask, glorot_init  # noqa: F401  (public re-exports)
from .model import Dropout

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during training."""


@dataclass
class HyperParams:
    batch_size: int = 64
    initial_lr: float = 0.5
    keep_prob: float = 0.75
    l2_gamma: float = 5e-5
    d_h: int = 300
    epochs: int = 10
    seed: int = 0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    freeze_embeddings: bool = False

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if self.l2_gamma < 0:
            raise ValueError(f"l2_gamma must be >= 0, got {self.l2_gamma}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def for_task(cls, task, **overrides):
        """Defaults for ``nli`` (keep 0.75, gamma 5e-5) or sentence classification (keep 0.8, gamma 1e-4)."""
        base = {"keep_prob": 0.75, "l2_gamma": 5e-5} if task == "nli" else {"keep_prob": 0.8, "l2_gamma": 1e-4}
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    """Running averages of squared gradients and squared updates, per parameter name."""

    sq_grad: dict = field(default_factory=dict)
    sq_delta: dict = field(default_factory=dict)
    steps: int = 0

    def slot(self, name, shape):
        if name not in self.sq_grad:
            self.sq_grad[name] = np.zeros(shape)
            self.sq_delta[name] = np.zeros(shape)
        return self.sq_grad[name], self.sq_delta[name]


def loss(logprobs, labels, params, gamma):
    """Mean negative log-likelihood plus ``gamma * sum ||W||_F^2`` over regularized params.

    ``logprobs`` is a list of per-example log-probability nodes.
    """
    if len(logprobs) != len(labels):
        raise ValueError(f"{len(logprobs)} predictions for {len(labels)} labels")
    terms = []
    for lp, y in zip(logprobs, labels):
        y = int(y)
        if not 0 <= y < lp.value.shape[0]:
            raise ValueError(f"label {y} out of range for {lp.value.shape[0]} classes")
        terms.append(ad.pick(lp, y))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    out = ad.scale(total, -1.0 / len(terms))
    if gamma:
        reg = [ad.squared_norm(p.tensor) for p in params if p.regularized]
        if reg:
            acc = reg[0]
            for r in reg[1:]:
                acc = ad.add(acc, r)
            out = ad.add(out, ad.scale(acc, gamma))
    return out


def adadelta_step(params, grads, state, hp):
    """Adadelta update scaled by ``hp.initial_lr``; ``params`` and ``grads`` are parallel lists."""
    rho, eps, lr = hp.adadelta_rho, hp.adadelta_eps, hp.initial_lr
    for p, g in zip(params, grads):
        if g.shape != p.tensor.value.shape:
            raise ValueError(f"gradient for {p.name} has shape {g.shape}, expected {p.tensor.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {p.name}; step aborted")
    for p, g in zip(params, grads):
        eg, ed = state.slot(p.name, g.shape)
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -lr * (np.sqrt(ed + eps) / np.sqrt(eg + eps)) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        p.tensor.value += delta
    state.steps += 1


def predict_labels(model, dataset):
    return np.array([int(np.argmax(model.logits(x).value)) for x in dataset.inputs], dtype=np.intp)


def accuracy(model, dataset):
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict_labels(model, dataset) == dataset.labels))


def train_step(model, batch, hp, state, dropout):
    groups = model.param_groups()
    # frozen embeddings are still graph leaves, so reset them too
    for t in model.named_tensors().values():
        t.zero_grad()
    logprobs = [ad.log_softmax(model.logits(batch.example(r), dropout)) for r in range(len(batch))]
    root = loss(logprobs, batch.labels, groups, hp.l2_gamma)
    value = float(root.value)
    if not math.isfinite(value):
        raise NumericError("non-finite loss")
    ad.backward(root)
    grads = [g.tensor.grad for g in groups]
    for g, grad in zip(groups, grads):
        if g.name == "embedding":
            # PAD never moves
            grad[:, PAD_ID] = 0.0
    adadelta_step(groups, grads, state, hp)
    return value


def train_loop(model, dataset, hp, checkpoint_sink=None, dev=None, state=None, stop_at_train_acc=None):
    """Train for ``hp.epochs`` epochs; returns a list of per-epoch metric dicts.

    ``checkpoint_sink(tag, model, state, history)`` is called with tag
    ``"initial"`` before training, ``"epoch"`` after every epoch and
    ``"best"`` whenever dev accuracy improves.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    model.frozen_embeddings = hp.freeze_embeddings
    state = state if state is not None else OptimizerState()
    shuffle_rng = np.random.default_rng([hp.seed, 1])
    dropout = Dropout(hp.keep_prob, np.random.default_rng([hp.seed, 2]))
    history = []
    if checkpoint_sink is not None:
        checkpoint_sink("initial", model, state, history)
    best_dev = -1.0
    for epoch in range(1, hp.epochs + 1):
        start = time.perf_counter()
        losses, sizes = [], []
        for b, batch in enumerate(make_batches(dataset, hp.batch_size, shuffle_rng)):
            try:
                losses.append(train_step(model, batch, hp, state, dropout))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            sizes.append(len(batch))
        record = {
            "epoch": epoch,
            "train_acc": accuracy(model, dataset),
            "dev_acc": accuracy(model, dev) if dev is not None and len(dev) else float("nan"),
            "loss": float(np.average(losses, weights=sizes)),
            "seconds": time.perf_counter() - start,
        }
        history.append(record)
        log.info(
            "epoch %d loss %.4f train %.4f dev %.4f (%.1fs)",
            epoch, record["loss"], record["train_acc"], record["dev_acc"], record["seconds"],
        )
        if checkpoint_sink is not None:
            checkpoint_sink("epoch", model, state, history)
            if dev is not None and record["dev_acc"] > best_dev:
                best_dev = record["dev_acc"]
                checkpoint_sink("best", model, state, history)
        if stop_at_train_acc is not None and record["train_acc"] >= stop_at_train_acc:
            break
    return history
