"""Dense float32 kernels used by the model and by attribution.

Tensors are plain ``numpy.ndarray`` objects of dtype float32. Every kernel
returns a fresh array and never mutates its inputs.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

DTYPE = np.float32


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation over the inner axis.

    Each output element is ``((a0*b0 + a1*b1) + a2*b2) + ...``. A running
    ``np.add.accumulate`` over the leading axis of the ``[k, m, n]`` product
    array is sequential by definition; ``np.add.reduce`` is not (numpy
    switches to unrolled pairwise sums when it collapses a unit axis).
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    if k == 0:
        return np.zeros((m, n), dtype=DTYPE)
    terms = np.ascontiguousarray(a.T)[:, :, None] * b[:, None, :]
    return np.add.accumulate(terms, axis=0)[-1]


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    v = as_tensor(v)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    shifted = v - v.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    # sequential row sum: trailing exp(-inf) == 0 entries from a causal mask
    # then leave the total bit-identical to the unpadded row
    total = np.add.accumulate(ex, axis=-1)[..., -1:]
    return (ex / total).astype(DTYPE)


def rms_denominator(v: np.ndarray, eps: float) -> np.ndarray:
    """``sqrt(mean(v**2) + eps)`` over the last axis, keepdims."""
    v = as_tensor(v)
    return np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + DTYPE(eps)).astype(DTYPE)


def rmsnorm_frozen(v: np.ndarray, gamma: np.ndarray, denom) -> np.ndarray:
    """RMS normalisation with an externally supplied denominator.

    Linear in ``v`` for a fixed ``denom``, which is what makes the logit
    decomposition additive.
    """
    v = as_tensor(v)
    gamma = as_tensor(gamma)
    denom = as_tensor(denom)
    if v.shape[-1] != gamma.shape[-1]:
        raise DimensionError(f"gamma has size {gamma.shape[-1]}, vector has {v.shape[-1]}")
    if np.any(denom <= 0) or not np.all(np.isfinite(denom)):
        raise DomainError(f"frozen norm denominator must be positive, got {denom}")
    return (gamma * v / denom).astype(DTYPE)


def rmsnorm(v: np.ndarray, gamma: np.ndarray, eps: float) -> np.ndarray:
    v = as_tensor(v)
    if v.shape[-1] == 0:
        raise DimensionError("rmsnorm of an empty vector")
    denom = rms_denominator(v, eps)
    if np.any(denom == 0):
        # all-zero row with eps == 0: the normalised vector is zero as well
        denom = np.where(denom == 0, DTYPE(1), denom)
    return rmsnorm_frozen(v, gamma, denom)


def silu(v: np.ndarray) -> np.ndarray:
    v = as_tensor(v)
    # 0.5 * v * (1 + tanh(v/2)) == v * sigmoid(v) without overflow in exp
    return (DTYPE(0.5) * v * (DTYPE(1) + np.tanh(DTYPE(0.5) * v))).astype(DTYPE)


def gated_ff(x, w_gate, w_up, w_down, b_down=None) -> np.ndarray:
    """SwiGLU feed-forward: ``down(silu(x Wg) * (x Wu)) + b_down``."""
    x = as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    hidden = silu(matmul(x, w_gate)) * matmul(x, w_up)
    out = matmul(hidden, w_down)
    if b_down is not None:
        b_down = as_tensor(b_down)
        if b_down.shape != (out.shape[-1],):
            raise DimensionError(f"b_down shape {b_down.shape} != ({out.shape[-1]},)")
        out = out + b_down
    return out[0] if squeeze else out
