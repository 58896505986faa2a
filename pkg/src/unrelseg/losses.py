"""Training objectives and their exact input gradients.

Every loss returns ``(value, gradient)`` where the gradient matches the
differentiable input's shape and is verified against central finite
differences in the tests.  Targets may carry the IGNORE value (-1); ignored
pixels contribute nothing to either the value or the gradient.
"""

import numpy as np

from .data import IGNORE
from .numerics import MIN_NORM, assert_finite, softmax


def cross_entropy(logits, target):
    """Mean over non-IGNORE pixels of -ln softmax(logits)[target].

    logits: (..., C); target: integer map matching the leading shape.
    Returns (value, d_logits).  An all-IGNORE target yields (0, zeros).
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    c = logits.shape[-1]
    flat_logits = logits.reshape(-1, c)
    flat_target = target.reshape(-1)
    if np.any(flat_target >= c):
        raise ValueError("target contains a class index >= C")

    keep = flat_target != IGNORE
    n = int(keep.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)

    kept_logits = flat_logits[keep]
    kept_target = flat_target[keep]
    shifted = kept_logits - kept_logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logz[:, None]
    value = float(-logp[np.arange(n), kept_target].mean())

    p = np.exp(logp)
    p[np.arange(n), kept_target] -= 1.0
    d_flat = np.zeros_like(flat_logits)
    d_flat[keep] = p / n
    return value, d_flat.reshape(logits.shape)


def symmetric_cross_entropy(logits, target, xi1, xi2, eps_floor=1e-4):
    """Forward CE plus reverse CE against a floored one-hot target.

    The reverse term treats the one-hot target's zero entries as
    ``eps_floor`` inside the logarithm, so per pixel it reduces to
    ``-ln(eps_floor) * (1 - p_target)``.  Mean over non-IGNORE pixels.
    """
    if eps_floor <= 0:
        raise ValueError("eps_floor must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    ce_value, ce_grad = cross_entropy(logits, target)

    c = logits.shape[-1]
    flat_logits = logits.reshape(-1, c)
    flat_target = target.reshape(-1)
    keep = flat_target != IGNORE
    n = int(keep.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits)

    p = softmax(flat_logits[keep], axis=-1)
    kept_target = flat_target[keep]
    idx = np.arange(n)
    p_t = p[idx, kept_target]
    k_floor = -np.log(eps_floor)
    reverse_value = float((k_floor * (1.0 - p_t)).mean())

    # d p_t / d logit_c = p_t * (1[c == t] - p_c)
    d_rev = k_floor * (-p_t[:, None]) * (np.eye(c)[kept_target] - p)
    d_flat = np.zeros_like(flat_logits)
    d_flat[keep] = d_rev / n
    value = xi1 * ce_value + xi2 * reverse_value
    grad = xi1 * ce_grad + xi2 * d_flat.reshape(logits.shape)
    return value, grad


def infonce(anchors, positive, negatives, tau):
    """Pixel-level InfoNCE over cosine similarities.

    anchors: (M, D) gradient-carrying queries; positive: (D,); negatives:
    (N, D).  Per anchor the loss is

        -log( e^{s+ / tau} / (e^{s+ / tau} + sum_j e^{s-_j / tau}) )

    averaged over anchors.  Gradients flow only into the anchors; the keys
    are fixed.  Empty negatives signal "skip this class": (0, zeros).
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if anchors.ndim != 2:
        raise ValueError("anchors must be (M, D)")
    m, d = anchors.shape
    if m == 0 or negatives.size == 0:
        return 0.0, np.zeros_like(anchors)
    negatives = negatives.reshape(-1, d)

    keys = np.vstack([positive[None, :], negatives])  # (1 + N, D)
    key_norms = np.linalg.norm(keys, axis=1)
    anchor_norms = np.linalg.norm(anchors, axis=1)
    if np.any(key_norms <= MIN_NORM) or np.any(anchor_norms <= MIN_NORM):
        raise ValueError("zero-norm vector in contrastive inputs")

    a_hat = anchors / anchor_norms[:, None]
    k_hat = keys / key_norms[:, None]
    sims = np.clip(a_hat @ k_hat.T, -1.0, 1.0)  # (M, 1 + N)
    s = sims / tau
    s_shift = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s_shift).sum(axis=1)) + s.max(axis=1)
    value = float((logz - s[:, 0]).mean())

    # d loss_i / d sim_ij = (softmax_j - 1[j == 0]) / tau, then through the
    # cosine: d sim/d a = (k_hat - sim * a_hat) / |a|.
    sm = np.exp(s - logz[:, None])
    d_sim = sm.copy()
    d_sim[:, 0] -= 1.0
    d_sim /= tau * m
    d_anchors = (d_sim @ k_hat - (d_sim * sims).sum(axis=1, keepdims=True) * a_hat) / anchor_norms[:, None]
    return value, d_anchors


def multilabel_classification(cls_logits, image_label):
    """Multi-label soft margin loss: mean over classes of BCE with logits."""
    s = np.asarray(cls_logits, dtype=np.float64)
    y = np.asarray(image_label, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("logits/label shape mismatch")
    assert_finite(s, "classification logits")
    c = s.size
    # -[y ln sig(s) + (1-y) ln(1-sig(s))] = y*softplus(-s) + (1-y)*softplus(s)
    softplus = np.logaddexp(0.0, s)
    softplus_neg = np.logaddexp(0.0, -s)
    value = float((y * softplus_neg + (1.0 - y) * softplus).mean())
    sig = 1.0 / (1.0 + np.exp(-s))
    grad = (sig - y) / c
    return value, grad


def total_objective(loss_s, loss_u, loss_c, lambda_u, lambda_c):
    """L = L_s + lambda_u * L_u + lambda_c * L_c."""
    if lambda_u < 0 or lambda_c < 0:
        raise ValueError("loss weights must be non-negative")
    return loss_s + lambda_u * loss_u + lambda_c * loss_c
