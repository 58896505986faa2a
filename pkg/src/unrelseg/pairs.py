"""Contrastive pair construction: anchors, negative keys, memory banks.

Anchor pixels are confident members of a class (gradient-carrying, student
side); negative keys are representations qualified as contrastively
dissimilar and live in per-class FIFO memory banks so that rare classes
keep a stable negative supply.

Qualification rules, per pixel and candidate class c:

  labeled pixel      y != c  and  rank(c) < r_l
  unlabeled pixel    entropy > gamma  and  r_l <= rank(c) < r_h
  image-level pixel  class c absent from the image  or  CAM_c < beta

where rank is the descending-probability category order (0 = argmax).
"""

import numpy as np

from .data import IGNORE
from .numerics import category_order, entropy


class MemoryBank:
    """Per-class bounded FIFO queue of key vectors."""

    def __init__(self, num_classes, dim, capacities):
        if len(capacities) != num_classes:
            raise ValueError("one capacity per class required")
        self.dim = dim
        self.capacities = [int(c) for c in capacities]
        self.queues = [[] for _ in range(num_classes)]

    @property
    def num_classes(self):
        return len(self.queues)

    def size(self, c):
        return len(self.queues[c])

    def sizes(self):
        return [len(q) for q in self.queues]

    def as_matrix(self, c):
        q = self.queues[c]
        if not q:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack(q)

    def load_matrix(self, c, mat):
        mat = np.asarray(mat, dtype=np.float64).reshape(-1, self.dim)
        self.queues[c] = [row.copy() for row in mat][-self.capacities[c]:]


def bank_push(bank, c, keys):
    """FIFO append; evict the oldest entries beyond capacity."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.size == 0:
        return
    keys = keys.reshape(-1, keys.shape[-1])
    if keys.shape[1] != bank.dim:
        raise ValueError(f"key dimension {keys.shape[1]} != bank dimension {bank.dim}")
    q = bank.queues[c]
    q.extend(k.copy() for k in keys)
    cap = bank.capacities[c]
    if len(q) > cap:
        del q[: len(q) - cap]


def bank_sample(bank, c, n, rng):
    """Uniform draw of n keys: without replacement when the queue is large
    enough, with replacement when short, empty when the queue is empty."""
    q = bank.queues[c]
    if not q or n <= 0:
        return np.zeros((0, bank.dim), dtype=np.float64)
    if len(q) >= n:
        idx = rng.choice(len(q), size=n, replace=False)
    else:
        idx = rng.integers(0, len(q), size=n)
    return np.stack([q[int(i)] for i in idx])


def sample_anchors(candidates, m, rng):
    """Same shortage policy as bank_sample, applied to anchor index lists."""
    n = len(candidates)
    if n == 0 or m <= 0:
        return []
    if n >= m:
        idx = rng.choice(n, size=m, replace=False)
    else:
        idx = rng.integers(0, n, size=m)
    return [candidates[int(i)] for i in idx]


def qualify_negative_labeled(y, p, c, r_l):
    """Eligible labeled negative: wrong class, but ranked plausible."""
    order = category_order(np.asarray(p, dtype=np.float64))
    return bool(y != c and 0 <= int(order[c]) < r_l)


def qualify_negative_unlabeled(h, gamma_t, p, c, r_l, r_h):
    """Eligible unlabeled negative: unreliable pixel, mid-ranked class."""
    order = category_order(np.asarray(p, dtype=np.float64))
    return bool(h > gamma_t and r_l <= int(order[c]) < r_h)


def qualify_negative_ws(image_label, cam_value, c, beta):
    """Eligible image-level negative: class absent, or CAM below beta."""
    if not 0.0 <= cam_value <= 1.0:
        raise ValueError("CAM values must lie in [0, 1]")
    return bool(image_label[c] == 0 or cam_value < beta)


def negative_mask_labeled(labels, prob, c, r_l, order=None):
    """Vectorized qualify_negative_labeled over an (H, W) map."""
    if order is None:
        order = category_order(prob)
    return (labels != c) & (order[..., c] < r_l)


def negative_mask_unlabeled(prob, gamma_t, c, r_l, r_h, reliable_mode=False,
                            gamma_low=None, h_map=None, order=None):
    """Vectorized qualify_negative_unlabeled over an (H, W, C) map.

    With ``reliable_mode`` the entropy test flips to the bottom-of-batch
    counterpart (entropy < gamma_low), which is the ablation variant that
    draws negatives from confident pixels instead of unreliable ones.
    Entropy and category order can be passed in when already computed.
    """
    if h_map is None:
        h_map = entropy(prob, axis=-1)
    if order is None:
        order = category_order(prob)
    rank_ok = (order[..., c] >= r_l) & (order[..., c] < r_h)
    if reliable_mode:
        if gamma_low is None:
            raise ValueError("reliable_mode requires gamma_low")
        return (h_map < gamma_low) & rank_ok
    return (h_map > gamma_t) & rank_ok


def anchor_mask_labeled(labels, prob, c, delta_p):
    """Labeled anchors for class c: correct class with p(c) > delta_p."""
    return (labels == c) & (prob[..., c] > delta_p)


def anchor_mask_unlabeled(pseudo, prob, c, delta_p):
    """Unlabeled anchors: reliable pseudo-label c with p(c) > delta_p.

    ``pseudo`` already encodes reliability (IGNORE when entropy >= gamma).
    """
    return (pseudo == c) & (pseudo != IGNORE) & (prob[..., c] > delta_p)
