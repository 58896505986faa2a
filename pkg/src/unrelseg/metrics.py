"""Evaluation: mean intersection-over-union and reliability diagnostics."""

import numpy as np

from .data import IGNORE
from .numerics import entropy


def confusion_matrix(pred, gt, num_classes):
    """C x C counts, rows = ground truth, cols = prediction.

    IGNORE pixels in the ground truth are excluded.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction/ground-truth shape mismatch")
    keep = gt != IGNORE
    if np.any(pred[keep] < 0) or np.any(pred[keep] >= num_classes) or np.any(gt[keep] >= num_classes):
        raise ValueError("class index out of range")
    idx = gt[keep].astype(np.int64) * num_classes + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def miou_from_confusion(cm):
    """Per-class IoU and their mean; classes absent from both gt and
    prediction are excluded from the mean."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    union = tp + fp + fn
    present = union > 0
    iou = np.zeros(cm.shape[0], dtype=np.float64)
    iou[present] = tp[present] / union[present]
    if not np.any(present):
        raise ValueError("no evaluated pixels")
    return iou, float(iou[present].mean())


def miou(pred, gt, num_classes=None):
    """Mean IoU of a predicted label map against ground truth."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if num_classes is None:
        valid = gt[gt != IGNORE]
        if valid.size == 0:
            raise ValueError("every pixel is IGNORE")
        num_classes = int(max(valid.max(), pred.max())) + 1
    if not np.any(gt != IGNORE):
        raise ValueError("every pixel is IGNORE")
    cm = confusion_matrix(pred, gt, num_classes)
    iou, mean = miou_from_confusion(cm)
    return {"per_class_iou": iou, "miou": mean}


def reliability_stats(prob, gamma):
    """Reliable/unreliable pixel counts per predicted class.

    A pixel is reliable when its entropy is strictly below gamma.
    """
    prob = np.asarray(prob, dtype=np.float64)
    c = prob.shape[-1]
    h_map = entropy(prob, axis=-1).ravel()
    pred = np.argmax(prob, axis=-1).ravel()
    reliable = h_map < gamma
    rel_counts = np.bincount(pred[reliable], minlength=c)[:c]
    unrel_counts = np.bincount(pred[~reliable], minlength=c)[:c]
    total = pred.size
    return {
        "reliable": rel_counts.astype(int),
        "unreliable": unrel_counts.astype(int),
        "unreliable_fraction": float(unrel_counts.sum() / total) if total else 0.0,
    }
