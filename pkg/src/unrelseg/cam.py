"""Class activation maps for the weakly supervised regime.

A CAM is the ReLU of the classifier-weighted encoder features, min-max
normalized per class map to [0, 1].  Thresholding at beta turns CAMs into
pixel pseudo-labels; pixels where no present foreground class activates
above beta fall back to background.
"""

import numpy as np

from .numerics import assert_finite, minmax_normalize


def compute_cam(encoder_features, cls_weights):
    """Per-class activation maps, normalized to [0, 1].

    encoder_features: (H, W, F); cls_weights: (C, F) rows of the image
    classifier.  Returns (C, H, W).
    """
    feats = np.asarray(encoder_features, dtype=np.float64)
    w = np.asarray(cls_weights, dtype=np.float64)
    if feats.shape[-1] != w.shape[-1]:
        raise ValueError("feature/weight channel mismatch")
    assert_finite(feats, "encoder features")
    raw = np.maximum(np.tensordot(feats, w, axes=([2], [1])), 0.0)  # (H, W, C)
    cams = np.empty((w.shape[0],) + feats.shape[:2])
    for c in range(w.shape[0]):
        cams[c] = minmax_normalize(raw[..., c])
    return cams


def cam_pseudo_labels(cams, image_label, beta):
    """Threshold CAMs into a label map.

    Only foreground classes present in ``image_label`` compete; a pixel is
    assigned the argmax CAM among them when that value exceeds beta (ties
    to the lower class index), and background class 0 otherwise.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    cams = np.asarray(cams, dtype=np.float64)
    image_label = np.asarray(image_label)
    present_fg = [c for c in range(1, cams.shape[0]) if image_label[c] == 1]

    labels = np.zeros(cams.shape[1:], dtype=np.int32)
    if not present_fg:
        return labels
    stack = cams[present_fg]                       # (k, H, W)
    best = np.argmax(stack, axis=0)                # ties -> lower index
    best_val = np.take_along_axis(stack, best[None], axis=0)[0]
    fg_ids = np.asarray(present_fg, dtype=np.int32)
    labels = np.where(best_val > beta, fg_ids[best], 0).astype(np.int32)
    return labels
