"""Pure numpy implementation of the directional attention kernel.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled kernel is benchmarked and tested against.
"""

import numpy as np

from .tensor import masked_softmax


def t2t_forward(a, b, bias, values, mask, c):
    pre = a[:, :, None] + b[:, None, :] + bias[:, None, None]
    th = np.tanh(pre / c)
    probs = masked_softmax(c * th + mask[None, :, :], axis=1)
    s = np.einsum("kij,ki->kj", probs, values)
    return s, probs, th


def t2t_backward(g, probs, th, values):
    gv = np.einsum("kij,kj->ki", probs, g)
    gp = values[:, :, None] * g[:, None, :]
    gl = probs * (gp - np.sum(probs * gp, axis=1, keepdims=True))
    gpre = gl * (1.0 - th * th)
    return gpre.sum(axis=2), gpre.sum(axis=1), gpre.sum(axis=(1, 2)), gv
