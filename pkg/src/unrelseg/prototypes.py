"""Class prototypes: momentum-averaged centroids in representation space.

Prototypes serve two roles: the positive key of every contrastive anchor,
and the reference points for prototypical denoising, which reweights a
pixel's class probabilities by softmaxed negative distances to the
prototypes.  A prototype must never be read before its first update.
"""

import numpy as np

from .numerics import assert_finite, softmax


class PrototypeBank:
    """One D-vector per class plus an initialized flag."""

    def __init__(self, num_classes, dim):
        self.protos = np.zeros((num_classes, dim), dtype=np.float64)
        self.initialized = np.zeros(num_classes, dtype=bool)

    @property
    def num_classes(self):
        return self.protos.shape[0]

    def all_initialized(self):
        return bool(self.initialized.all())


def batch_centroid(reprs):
    """Arithmetic mean of a set of D-vectors; None signals "no update"."""
    reprs = np.asarray(reprs, dtype=np.float64)
    if reprs.size == 0:
        return None
    if reprs.ndim == 1:
        reprs = reprs[None, :]
    if reprs.ndim != 2:
        raise ValueError("expected a (n, D) stack of vectors")
    return reprs.mean(axis=0)


def momentum_update(bank, c, centroid, m_proto):
    """proto_c <- m * proto_c + (1 - m) * centroid; first update copies.

    A None centroid (empty class this batch) leaves the bank untouched.
    """
    if not 0.0 <= m_proto <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    if centroid is None:
        return bank
    centroid = np.asarray(centroid, dtype=np.float64)
    if centroid.shape != bank.protos[c].shape:
        raise ValueError("centroid dimension mismatch")
    assert_finite(centroid, "centroid")
    if bank.initialized[c]:
        bank.protos[c] = m_proto * bank.protos[c] + (1.0 - m_proto) * centroid
    else:
        bank.protos[c] = centroid
        bank.initialized[c] = True
    return bank


def denoise_weights(reprs, bank):
    """Softmax over negative Euclidean distances to the class prototypes.

    reprs: (D,) or any (..., D) stack.  Requires every prototype to be
    initialized; callers fall back to identity weights otherwise.
    """
    if not bank.all_initialized():
        raise ValueError("denoise_weights needs every prototype initialized")
    reprs = np.asarray(reprs, dtype=np.float64)
    flat = reprs.reshape(-1, reprs.shape[-1])
    # (n, C) distances to each prototype
    diffs = flat[:, None, :] - bank.protos[None, :, :]
    dist = np.sqrt((diffs * diffs).sum(axis=-1))
    w = softmax(-dist, axis=-1)
    return w.reshape(reprs.shape[:-1] + (bank.num_classes,))


def denoise_predictions(prob, weights):
    """Element-wise product with the weight map, renormalized per pixel.

    Pixels where the product sums to zero keep their original prediction.
    """
    prob = np.asarray(prob, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if prob.shape != weights.shape:
        raise ValueError("probability/weight shape mismatch")
    raw = prob * weights
    total = raw.sum(axis=-1, keepdims=True)
    degenerate = total[..., 0] == 0.0
    out = np.where(total > 0.0, raw / np.where(total > 0.0, total, 1.0), 0.0)
    if np.any(degenerate):
        out[degenerate] = prob[degenerate]
    return out
