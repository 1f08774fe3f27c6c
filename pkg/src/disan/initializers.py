"""Weight initialization and dropout masks."""

import numpy as np

from .tensor import DTYPE


def glorot_init(rows, cols, rng):
    """Uniform Glorot samples in ``(-L, L)`` with ``L = sqrt(6 / (rows + cols))``."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    out = rng.uniform(-limit, limit, size=(rows, cols))
    # uniform() samples [low, high); keep the open interval
    out[out == -limit] = 0.0
    return out.astype(DTYPE, copy=False)


def zeros(*shape):
    return np.zeros(shape, dtype=DTYPE)


def dropout_mask(shape, keep_prob, rng, mode="train"):
    """Inverted dropout mask: Bernoulli(keep_prob) / keep_prob in train mode, ones in eval."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or keep_prob == 1.0:
        return np.ones(shape, dtype=DTYPE)
    return (rng.random(shape) < keep_prob).astype(DTYPE) / keep_prob
