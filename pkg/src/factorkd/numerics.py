"""Stable log-space arithmetic shared by every inference routine.

All scores live in the log domain as 64-bit floats.  The additive identity
of the log semiring is IEEE negative infinity; NaN is never a legal value,
so every reduction guards the max-shift against all-(-inf) inputs instead
of letting NaN propagate silently through a dynamic program.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def log_sum_exp(values) -> float:
    """log(sum(exp(v))) over a non-empty 1-D collection of log scores.

    Entries may be -inf (they contribute nothing); the result is -inf only
    when every entry is -inf.  Raises ValueError on an empty input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = np.max(v)
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.sum(np.exp(v - m))))


def logsumexp_last(a: np.ndarray) -> np.ndarray:
    """log-sum-exp reduction over the last axis of an array.

    Rows that are entirely -inf reduce to -inf without raising warnings.
    """
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=-1, keepdims=True)
    safe = np.where(np.isneginf(m), 0.0, m)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = safe[..., 0] + np.log(np.sum(np.exp(a - safe), axis=-1))
    return np.where(np.isneginf(m[..., 0]), NEG_INF, out)


def log_softmax(values) -> np.ndarray:
    """Normalize log scores so the exponentials sum to one.

    Order-preserving and shift-invariant.  At least one entry must be
    finite; an all-(-inf) input has no normalizable distribution and
    raises ValueError.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_softmax of an empty sequence")
    lse = logsumexp_last(v)
    if np.any(np.isneginf(lse)):
        raise ValueError("log_softmax of an all-(-inf) row: degenerate distribution")
    with np.errstate(invalid="ignore"):
        out = v - np.expand_dims(lse, -1)
    # -inf - finite is a well-defined -inf; only NaN (from inf-inf) is illegal
    # and the guard above rules it out.
    return out


def softmax_last(a: np.ndarray) -> np.ndarray:
    """exp(log_softmax) over the last axis; -inf entries map to exact 0."""
    return np.exp(log_softmax(a))


def masked_inner(q: np.ndarray, s: np.ndarray) -> float:
    """sum(q * s) treating q == 0 entries as contributing 0 even when the
    paired score is -inf (forbidden substructures)."""
    with np.errstate(invalid="ignore"):
        return float(np.where(q > 0, q * s, 0.0).sum())
