"""Paired-run experiments: the desk-scale counterparts of the ablations.

Each helper trains a handful of variants across seeds on one dataset and
reports per-seed and mean final validation mIoU, so that directional
claims (method A beats method B by at least so many points) can be checked
mechanically.
"""

import dataclasses
import os

import numpy as np

from . import trainer
from .data import load_manifest, load_scene
from .metrics import confusion_matrix, miou_from_confusion


def _run_variant(cfg, data_dir, out_root, name, seeds):
    scores = []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=int(seed))
        out_dir = os.path.join(out_root, f"{name}_seed{seed}")
        summary = trainer.run(run_cfg, data_dir, out_dir)
        scores.append(summary["final_val_miou"])
    return {"per_seed": scores, "mean": float(np.mean(scores))}


def run_negative_ablation(cfg, data_dir, out_root, seeds=(0, 1, 2)):
    """Unreliable negatives vs reliable negatives vs labeled-only training."""
    results = {}
    results["unreliable"] = _run_variant(
        dataclasses.replace(cfg, negative_mode="unreliable", use_unlabeled=True),
        data_dir, out_root, "unreliable", seeds)
    results["reliable"] = _run_variant(
        dataclasses.replace(cfg, negative_mode="reliable", use_unlabeled=True),
        data_dir, out_root, "reliable", seeds)
    results["supervised"] = _run_variant(
        dataclasses.replace(cfg, use_unlabeled=False),
        data_dir, out_root, "supervised", seeds)
    results["gap_unreliable_vs_reliable"] = results["unreliable"]["mean"] - results["reliable"]["mean"]
    results["gap_unreliable_vs_supervised"] = results["unreliable"]["mean"] - results["supervised"]["mean"]
    return results


def run_domain_adaptation_check(cfg, data_dir, out_root, seeds=(0, 1, 2)):
    """Adapted training on shifted targets vs source-only training."""
    results = {}
    results["adapted"] = _run_variant(
        dataclasses.replace(cfg, use_unlabeled=True),
        data_dir, out_root, "adapted", seeds)
    results["source_only"] = _run_variant(
        dataclasses.replace(cfg, use_unlabeled=False),
        data_dir, out_root, "source_only", seeds)
    results["gap"] = results["adapted"]["mean"] - results["source_only"]["mean"]
    return results


def all_background_miou(data_dir):
    """Validation mIoU of the trivial predictor that outputs class 0."""
    manifest = load_manifest(data_dir)
    classes = int(manifest["spec"]["classes"])
    cm = np.zeros((classes, classes), dtype=np.int64)
    for i in manifest["val_ids"]:
        scene = load_scene(data_dir, i, with_label=True)
        pred = np.zeros_like(scene.label)
        cm += confusion_matrix(pred, scene.label, classes)
    _, mean = miou_from_confusion(cm)
    return mean


def run_weak_supervision_check(cfg, data_dir, out_root, seeds=(0, 1, 2)):
    """ws training vs the all-background baseline."""
    results = {"ws": _run_variant(cfg, data_dir, out_root, "ws", seeds)}
    results["all_background"] = all_background_miou(data_dir)
    results["gap"] = results["ws"]["mean"] - results["all_background"]
    return results
