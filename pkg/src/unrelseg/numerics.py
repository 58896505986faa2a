"""Primitive numerical operations shared by every training module.

All training math runs in float64; label maps are int32.  Every public
function validates its contract and raises ValueError on violation.  Apart
from the documented infinities of quantile_threshold, no function returns
NaN or Inf.
"""

import numpy as np

# Per-pixel probability vectors must sum to 1 within this tolerance.
SIMPLEX_ATOL = 1e-9

# Vectors shorter than this norm cannot be normalized meaningfully.
MIN_NORM = 1e-12


def assert_finite(x, name="array"):
    """Raise ValueError if ``x`` contains NaN or Inf."""
    x = np.asarray(x)
    if x.dtype.kind == "f" and not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def softmax(logits, axis=-1):
    """Numerically stabilized softmax along ``axis``.

    Shift-invariant: softmax(x + k) == softmax(x) for any constant k.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[axis] < 1:
        raise ValueError("softmax needs at least one class")
    assert_finite(logits, "softmax input")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _check_simplex(p, axis=-1):
    if np.any(p < 0):
        raise ValueError("probability vector has a negative entry")
    total = np.sum(p, axis=axis)
    if np.any(np.abs(total - 1.0) > SIMPLEX_ATOL):
        raise ValueError("probability vector does not sum to 1")


def entropy(p, axis=-1):
    """Shannon entropy in nats, with the convention 0*ln(0) = 0.

    Bounded by [0, ln C] for a C-way distribution.
    """
    p = np.asarray(p, dtype=np.float64)
    assert_finite(p, "entropy input")
    _check_simplex(p, axis=axis)
    contrib = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = -np.sum(contrib, axis=axis)
    return np.maximum(h, 0.0)


def quantile_threshold(values, alpha):
    """(1 - alpha)-quantile of a flat array under linear interpolation.

    Used as the entropy cut: a fraction ``alpha`` of the values lies at or
    above the returned threshold (up to one interpolation cell).  The
    endpoints are special-cased so the downstream partition semantics hold
    exactly: alpha == 0 returns +inf (nothing above), alpha == 1 returns
    -inf (everything above).
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("quantile_threshold: empty array")
    assert_finite(values, "quantile input")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return np.inf
    if alpha == 1.0:
        return -np.inf
    return float(np.quantile(values, 1.0 - alpha, method="linear"))


def category_order(p):
    """Descending-probability rank of every class.

    ``order[..., c]`` is the rank of class c: 0 for the argmax,
    C-1 for the argmin.  Ties are broken stably, the lower class index
    taking the better (lower) rank.  Accepts a single vector or any
    stack of vectors along the last axis.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 1:
        raise ValueError("category_order needs at least one class")
    assert_finite(p, "category_order input")
    # Stable sort on -p keeps the original index order for equal entries.
    by_rank = np.argsort(-p, axis=-1, kind="stable")
    order = np.empty_like(by_rank)
    ranks = np.broadcast_to(np.arange(p.shape[-1]), p.shape)
    np.put_along_axis(order, by_rank, ranks, axis=-1)
    return order.astype(np.int32)


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= MIN_NORM or nb <= MIN_NORM:
        raise ValueError("cosine_similarity: zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def minmax_normalize(m):
    """Rescale a map to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    assert_finite(m, "minmax input")
    lo = m.min()
    hi = m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)
