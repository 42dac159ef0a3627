"""Dense/sparse numerical kernels with analytic gradients.

Everything is float64 and deterministic: sparse-dense products reduce each
row's entries in their stored (ascending column) order, so repeated runs on
identical inputs are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, InvalidRateError, ShapeMismatchError
from .graph import SparseRowMatrix

__all__ = [
    "spmm",
    "matmul",
    "add_bias",
    "relu",
    "softmax_rows",
    "cross_entropy",
    "AdamState",
    "adam_step",
    "DropoutMask",
    "sample_dropout_mask",
]


def _as_matrix(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeMismatchError(f"{name} contains non-finite values")
    return m


def spmm(s: SparseRowMatrix, m) -> np.ndarray:
    """Sparse-dense product s @ m with a fixed per-row reduction order."""
    m = _as_matrix(m, "dense operand")
    if s.n_cols != m.shape[0]:
        raise ShapeMismatchError(
            f"sparse is {s.n_rows}x{s.n_cols}, dense has {m.shape[0]} rows")
    out = np.zeros((s.n_rows, m.shape[1]))
    if s.indices.size == 0:
        return out
    prod = s.values[:, None] * m[s.indices]
    counts = np.diff(s.indptr)
    nonempty = counts > 0
    starts = s.indptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(prod, starts, axis=0)
    return out


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a, "left operand")
    b = _as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add_bias(m, bias) -> np.ndarray:
    m = _as_matrix(m, "matrix")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (m.shape[1],):
        raise ShapeMismatchError(f"bias of shape {bias.shape} for matrix {m.shape}")
    return m + bias


def relu(m) -> np.ndarray:
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax, computed with max subtraction for stability."""
    m = _as_matrix(m, "logits")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels, mask) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over masked rows and its logit gradient.

    ``probs`` must be row-stochastic (softmax output). The returned gradient
    is with respect to the pre-softmax logits: (p - onehot)/|mask| on masked
    rows and zero elsewhere.
    """
    probs = _as_matrix(probs, "probs")
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if labels.shape[0] != probs.shape[0] or mask.shape[0] != probs.shape[0]:
        raise ShapeMismatchError("probs, labels and mask must agree on row count")
    k = int(mask.sum())
    if k == 0:
        raise EmptyMaskError("loss mask selects no rows")
    rows = np.flatnonzero(mask)
    picked = probs[rows, labels[rows]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / k)
    grad = np.zeros_like(probs)
    grad[rows] = probs[rows]
    grad[rows, labels[rows]] -= 1.0
    grad[rows] /= k
    return loss, grad


@dataclass
class AdamState:
    """Optimizer state for a single parameter matrix (single-owner)."""

    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, learning_rate: float, **kw) -> "AdamState":
        return cls(learning_rate=learning_rate,
                   m=np.zeros_like(param), v=np.zeros_like(param), **kw)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter values."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeMismatchError(
            f"param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class DropoutMask:
    """Inverted-dropout mask: entries are 0 or 1/(1 - rate)."""

    values: np.ndarray
    rate: float


def sample_dropout_mask(shape, rate: float, rng: np.random.Generator) -> DropoutMask:
    """Each entry is independently 0 with probability ``rate``, else scaled.

    Survivors are scaled by 1/(1 - rate) so the masked activation matches the
    unmasked one in expectation (inference stays on the same scale).
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return DropoutMask(values=np.ones(shape), rate=0.0)
    keep = rng.random(shape) >= rate
    return DropoutMask(values=keep / (1.0 - rate), rate=rate)
