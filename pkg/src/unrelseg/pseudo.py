"""Entropy-partitioned pseudo-labeling.

A pixel is reliable when its predictive entropy falls strictly below the
partition threshold gamma; boundary pixels (entropy == gamma) count as
unreliable.  The unreliable fraction alpha decays linearly per epoch from
alpha_0 to exactly 0, and the unsupervised loss weight scales with the
reciprocal reliable fraction.
"""

import numpy as np

from .data import IGNORE
from .numerics import entropy, quantile_threshold


def dpa_alpha(alpha_0, t, total):
    """Linear decay of the unreliable fraction: alpha_0 * (1 - t/total)."""
    if not 0.0 < alpha_0 < 1.0:
        raise ValueError("alpha_0 must lie in (0, 1)")
    if t < 0 or t > total:
        raise ValueError(f"epoch {t} outside [0, {total}]")
    return alpha_0 * (1.0 - t / total)


def compute_gamma(entropy_map, alpha_t):
    """Entropy threshold: the (1 - alpha_t)-quantile of the batch entropies."""
    return quantile_threshold(np.asarray(entropy_map).ravel(), alpha_t)


def assign_pseudo_labels(prob, gamma_t):
    """Argmax labels for reliable pixels, IGNORE elsewhere.

    prob: (H, W, C) simplex map; reliability is entropy < gamma_t (strict).
    Argmax ties resolve to the lower class index.
    """
    prob = np.asarray(prob, dtype=np.float64)
    h_map = entropy(prob, axis=-1)
    labels = np.argmax(prob, axis=-1).astype(np.int32)
    labels[h_map >= gamma_t] = IGNORE
    return labels


def adaptive_weight(pseudo_labels, eta):
    """Unsupervised-loss weight: eta * total pixels / reliable pixels.

    Returns 0.0 when nothing is reliable, signalling the caller to skip the
    unsupervised loss this step.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    pseudo_labels = np.asarray(pseudo_labels)
    total = pseudo_labels.size
    kept = int(np.count_nonzero(pseudo_labels != IGNORE))
    if kept == 0:
        return 0.0
    return eta * total / kept
