"""Dense float64 tensor primitives shared by every attention mechanism.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The functions
here validate shapes loudly and never mutate their inputs.
"""

import numpy as np

NEG_INF = float("-inf")

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def as_tensor(x):
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _broadcastable(a, b):
    if a.shape == b.shape:
        return True
    # bias vector broadcast along the token (last) axis
    return b.ndim == 1 and a.ndim == 2 and a.shape[0] == b.shape[0]


def elu(x):
    x = as_tensor(x)
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_UNARY = {"tanh": np.tanh, "sigmoid": sigmoid, "elu": elu}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op, *operands):
    """Apply ``op`` to one operand (tanh, sigmoid, elu) or two (add, sub, mul).

    The second operand of a binary op may be a vector broadcast along the
    token axis of a ``d x n`` first operand.
    """
    if op in _UNARY:
        if len(operands) != 1:
            raise TypeError(f"{op} takes one operand, got {len(operands)}")
        return _UNARY[op](operands[0])
    if op in _BINARY:
        if len(operands) != 2:
            raise TypeError(f"{op} takes two operands, got {len(operands)}")
        a, b = (as_tensor(o) for o in operands)
        if not _broadcastable(a, b):
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
        if a.shape != b.shape:
            b = b[:, None]
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def masked_softmax(scores, mask=None, axis=-1):
    """Softmax along ``axis`` after adding an additive {0, NEG_INF} mask.

    Masked entries get exactly zero probability. A slice whose entries are
    all masked comes back as all zeros instead of NaN.
    """
    scores = as_tensor(scores)
    logits = scores if mask is None else scores + as_tensor(mask)
    valid = np.isfinite(logits)
    top = np.max(np.where(valid, logits, NEG_INF), axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(valid, np.exp(np.where(valid, logits - top, 0.0)), 0.0)
    total = np.sum(e, axis=axis, keepdims=True)
    return np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.0)


def concat_vertical(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_vertical: token axes differ, {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)


def softmax_vector(z):
    return masked_softmax(z)
