"""Training orchestration for the ss, da and ws regimes.

One training step follows a fixed order: teacher forward, prototypical
denoising, entropy partition, pseudo-labels and adaptive weight, student
forward, losses, contrastive pair assembly and bank maintenance, SGD
update, EMA teacher update, prototype update.  Every random draw comes
from a single serialized PCG64 stream, so a run is a pure function of
(config, dataset) and can be resumed bit-identically from a checkpoint.
"""

import dataclasses
import json
import os

import numpy as np

from . import cam as cam_mod
from . import model as model_mod
from . import pairs, prototypes, pseudo, tensorio
from .config import ConfigError, render_config, validate_for_classes
from .data import IGNORE, hflip_image, hflip_label, load_manifest, load_scene
from .losses import (cross_entropy, infonce, multilabel_classification,
                     symmetric_cross_entropy)
from .metrics import confusion_matrix, miou_from_confusion
from .numerics import category_order as numerics_order
from .numerics import entropy, quantile_threshold

POLY_POWER = 0.9


def poly_lr(lr_base, iteration, total_iter):
    """lr_base * (1 - iter/total)^0.9."""
    if total_iter <= 0:
        raise ValueError("total_iter must be positive")
    if iteration < 0 or iteration > total_iter:
        raise ValueError(f"iteration {iteration} outside [0, {total_iter}]")
    return lr_base * (1.0 - iteration / total_iter) ** POLY_POWER


# Head parameters train faster than the encoder, mirroring the common
# decoder-lr-times-ten segmentation recipe.
_HEAD_FIELDS = ("seg_w", "seg_b", "rep1_w", "rep1_b", "rep2_w", "rep2_b",
                "cls_w", "cls_b")


def sgd_update(params, grads, velocities, lr, momentum, weight_decay,
               head_lr_scale=1.0):
    """Momentum SGD with L2 weight decay folded into the gradient."""
    for name in params.FIELDS:
        p = getattr(params, name)
        g = getattr(grads, name) + weight_decay * p
        v = getattr(velocities, name)
        v *= momentum
        v += g
        scale = head_lr_scale if name in _HEAD_FIELDS else 1.0
        p -= (lr * scale) * v


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass
class TrainState:
    student: model_mod.ModelParams
    teacher: model_mod.ModelParams  # None in the ws regime
    velocities: model_mod.ModelParams
    proto: prototypes.PrototypeBank
    bank: pairs.MemoryBank
    rng: np.random.Generator
    epoch: int = 0
    iteration: int = 0
    best_miou: float = -1.0


def init_state(cfg, num_classes):
    student = model_mod.init_params(cfg.seed, cfg.features, num_classes, cfg.embed_dim)
    teacher = None if cfg.regime == "ws" else student.copy()
    caps = [cfg.bank_capacity_bg] + [cfg.bank_capacity_fg] * (num_classes - 1)
    return TrainState(
        student=student,
        teacher=teacher,
        velocities=student.zeros_like(),
        proto=prototypes.PrototypeBank(num_classes, cfg.embed_dim),
        bank=pairs.MemoryBank(num_classes, cfg.embed_dim, caps),
        rng=np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1])),
    )


class LoadedData:
    """All scenes of a dataset held in memory.

    Ground-truth pixel labels are loaded only where the regime may read
    them: the labeled split (ss/da) and the validation split.  Unlabeled
    and ws train scenes expose image + image-level vector only.
    """

    def __init__(self, data_dir, manifest, regime):
        spec = manifest["spec"]
        self.classes = int(spec["classes"])
        self.labeled_ids = list(manifest["labeled_ids"])
        self.unlabeled_ids = list(manifest["unlabeled_ids"])
        self.val_ids = list(manifest["val_ids"])
        self.images = {}
        self.labels = {}
        self.cls = {}
        with_pixel_labels = set(self.val_ids)
        if regime in ("ss", "da"):
            with_pixel_labels |= set(self.labeled_ids)
        for i in self.labeled_ids + self.unlabeled_ids + self.val_ids:
            scene = load_scene(data_dir, i, with_label=i in with_pixel_labels)
            self.images[i] = scene.image
            self.cls[i] = scene.image_label
            if scene.label is not None:
                self.labels[i] = scene.label


# ---------------------------------------------------------------------------
# step objectives: value + exact parameter gradients for a frozen step plan
# ---------------------------------------------------------------------------

def _contrast_terms(outputs_by_stream, plan_entries, tau):
    """InfoNCE over the plan; returns (mean value, per-image d_repr adders).

    plan entries: (class, anchor_coords, positive, negatives) where each
    coordinate is (stream, image_index, flat_pixel).  Gradients flow only
    into the anchors, scattered back onto the representation maps.
    """
    if not plan_entries:
        return 0.0, {}
    d_repr = {}
    value = 0.0
    n_active = len(plan_entries)
    for _, coords, positive, negatives in plan_entries:
        anchors = np.stack([
            outputs_by_stream[s][i].repr.reshape(-1, outputs_by_stream[s][i].repr.shape[-1])[px]
            for (s, i, px) in coords
        ])
        term, d_anchors = infonce(anchors, positive, negatives, tau)
        value += term / n_active
        for k, (s, i, px) in enumerate(coords):
            key = (s, i)
            if key not in d_repr:
                shape = outputs_by_stream[s][i].repr.shape
                d_repr[key] = np.zeros((shape[0] * shape[1], shape[2]))
            d_repr[key][px] += d_anchors[k] / n_active
    return value, d_repr


def step_objective_ss(params, images_l, labels_l, images_u, pseudo_u,
                      lambda_u, plan_entries, lambda_c, cfg,
                      fwd_l=None, fwd_u=None):
    """Full ss/da step objective L_s + lambda_u L_u + lambda_c L_c.

    All selections (pseudo-labels, anchor coordinates, keys) are frozen
    inputs; the returned gradients are exact with respect to ``params``.
    Cached forward results may be passed in; otherwise they are computed.
    """
    if fwd_l is None:
        fwd_l = [model_mod.forward(params, img, return_cache=True) for img in images_l]
    if fwd_u is None:
        fwd_u = [model_mod.forward(params, img, return_cache=True) for img in images_u]
    outs_l = [o for o, _ in fwd_l]
    outs_u = [o for o, _ in fwd_u]

    loss_s, d_logits_l = cross_entropy(
        np.stack([o.logits for o in outs_l]), np.stack(labels_l))

    loss_u = 0.0
    d_logits_u = None
    if images_u:
        loss_u, d_logits_u = symmetric_cross_entropy(
            np.stack([o.logits for o in outs_u]), np.stack(pseudo_u),
            cfg.xi1, cfg.xi2, cfg.eps_floor)

    loss_c, d_repr = _contrast_terms({0: outs_l, 1: outs_u}, plan_entries, cfg.tau)

    grads = params.zeros_like()
    for i, (out, cache) in enumerate(fwd_l):
        dr = d_repr.get((0, i))
        g = model_mod.backward(
            params, images_l[i],
            d_logits=d_logits_l[i],
            d_repr=None if dr is None else (lambda_c * dr).reshape(out.repr.shape),
            cache=cache)
        _accumulate(grads, g)
    for i, (out, cache) in enumerate(fwd_u):
        dr = d_repr.get((1, i))
        g = model_mod.backward(
            params, images_u[i],
            d_logits=None if d_logits_u is None else lambda_u * d_logits_u[i],
            d_repr=None if dr is None else (lambda_c * dr).reshape(out.repr.shape),
            cache=cache)
        _accumulate(grads, g)

    total = loss_s + lambda_u * loss_u + lambda_c * loss_c
    return total, loss_s, loss_u, loss_c, grads


def step_objective_ws(params, images, image_labels, pseudo_b, lambda_u,
                      plan_entries, lambda_c, cfg):
    """ws step objective: classification + CAM-CE + contrast."""
    fwd = [model_mod.forward(params, img, return_cache=True) for img in images]
    outs = [o for o, _ in fwd]

    n = len(images)
    loss_s = 0.0
    d_cls = []
    for out, y in zip(outs, image_labels):
        v, g = multilabel_classification(out.cls_logits, y)
        loss_s += v / n
        d_cls.append(g / n)

    loss_u, d_logits = cross_entropy(
        np.stack([o.logits for o in outs]), np.stack(pseudo_b))

    loss_c, d_repr = _contrast_terms({0: outs}, plan_entries, cfg.tau)

    grads = params.zeros_like()
    for i, (out, cache) in enumerate(fwd):
        dr = d_repr.get((0, i))
        g = model_mod.backward(
            params, images[i],
            d_logits=lambda_u * d_logits[i],
            d_repr=None if dr is None else (lambda_c * dr).reshape(out.repr.shape),
            d_cls=d_cls[i],
            cache=cache)
        _accumulate(grads, g)

    total = loss_s + lambda_u * loss_u + lambda_c * loss_c
    return total, loss_s, loss_u, loss_c, grads


def _accumulate(total, grads):
    for name in total.FIELDS:
        getattr(total, name).__iadd__(getattr(grads, name))


# ---------------------------------------------------------------------------
# contrastive pair assembly and bank maintenance
# ---------------------------------------------------------------------------

def _subsampled_push(bank, c, keys, max_push, rng):
    if keys.shape[0] > max_push:
        idx = rng.choice(keys.shape[0], size=max_push, replace=False)
        keys = keys[np.sort(idx)]
    pairs.bank_push(bank, c, keys)


def _coord_block(stream, image_index, mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    block = np.empty((idx.size, 3), dtype=np.int64)
    block[:, 0] = stream
    block[:, 1] = image_index
    block[:, 2] = idx
    return block


# Representations with smaller norm cannot enter cosine-similarity terms;
# such pixels are excluded from anchors and keys at qualification time.
_COSINE_NORM_FLOOR = 1e-12


def _usable_rows(flat_repr):
    return np.linalg.norm(flat_repr, axis=1) > _COSINE_NORM_FLOOR


def build_pairs_ss(state, cfg, labels_l, t_prob_l, t_repr_l,
                   p_star_u, pseudo_u, t_repr_u, gamma_t, gamma_low, active,
                   s_repr_l, s_repr_u):
    """Per class: sample anchors, push qualified negative keys, sample
    negatives.  Pushes happen every step; sampling only when the
    contrastive path is active and the class prototype exists.  Anchor
    vectors come from the student maps, keys from the teacher maps."""
    num_classes = state.proto.num_classes
    reliable_mode = cfg.negative_mode == "reliable"
    order_l = [numerics_order(tp) for tp in t_prob_l]
    order_u = [numerics_order(ps) for ps in p_star_u]
    h_u = [entropy(ps, axis=-1) for ps in p_star_u]
    flat_l = [tr.reshape(-1, tr.shape[-1]) for tr in t_repr_l]
    flat_u = [tr.reshape(-1, tr.shape[-1]) for tr in t_repr_u]
    key_ok_l = [_usable_rows(fr) for fr in flat_l]
    key_ok_u = [_usable_rows(fr) for fr in flat_u]
    anchor_ok_l = [_usable_rows(sr.reshape(-1, sr.shape[-1])) for sr in s_repr_l]
    anchor_ok_u = [_usable_rows(sr.reshape(-1, sr.shape[-1])) for sr in s_repr_u]

    entries = []
    for c in range(num_classes):
        class_active = (active and bool(state.proto.initialized[c])
                        and np.linalg.norm(state.proto.protos[c]) > _COSINE_NORM_FLOOR)
        sampled = []
        if class_active:
            blocks = []
            for i, (lab, tp) in enumerate(zip(labels_l, t_prob_l)):
                mask = pairs.anchor_mask_labeled(lab, tp, c, cfg.delta_p).ravel()
                block = _coord_block(0, i, mask & anchor_ok_l[i])
                if block is not None:
                    blocks.append(block)
            for i, (ps, pst) in enumerate(zip(pseudo_u, p_star_u)):
                mask = pairs.anchor_mask_unlabeled(ps, pst, c, cfg.delta_p).ravel()
                block = _coord_block(1, i, mask & anchor_ok_u[i])
                if block is not None:
                    blocks.append(block)
            coords = np.concatenate(blocks) if blocks else np.zeros((0, 3), dtype=np.int64)
            sampled = pairs.sample_anchors(coords, cfg.num_anchors, state.rng)

        keys = []
        for i, (lab, tp) in enumerate(zip(labels_l, t_prob_l)):
            mask = pairs.negative_mask_labeled(lab, tp, c, cfg.r_l, order=order_l[i]).ravel()
            keys.append(flat_l[i][mask & key_ok_l[i]])
        for i, pst in enumerate(p_star_u):
            mask = pairs.negative_mask_unlabeled(
                pst, gamma_t, c, cfg.r_l, cfg.r_h,
                reliable_mode=reliable_mode, gamma_low=gamma_low,
                h_map=h_u[i], order=order_u[i]).ravel()
            keys.append(flat_u[i][mask & key_ok_u[i]])
        keys = np.vstack(keys) if keys else np.zeros((0, cfg.embed_dim))
        if keys.shape[0]:
            _subsampled_push(state.bank, c, keys, cfg.max_push, state.rng)

        if class_active and len(sampled):
            negatives = pairs.bank_sample(state.bank, c, cfg.num_negatives, state.rng)
            if negatives.shape[0]:
                entries.append((c, sampled, state.proto.protos[c].copy(), negatives))
    return entries


def build_pairs_ws(state, cfg, image_labels, cams_b, reprs_b, active):
    """ws counterpart: anchors are high-CAM pixels of present classes,
    negatives follow the image-level rule (absent class, or CAM < beta)."""
    num_classes = state.proto.num_classes
    flat_reprs = [rep.reshape(-1, rep.shape[-1]) for rep in reprs_b]
    usable = [_usable_rows(fr) for fr in flat_reprs]
    entries = []
    anchor_candidates = {}
    for c in range(num_classes):
        blocks = []
        for i, (y, cams) in enumerate(zip(image_labels, cams_b)):
            if y[c] != 1:
                continue
            block = _coord_block(0, i, (cams[c] > cfg.beta).ravel())
            if block is not None:
                blocks.append(block)
        coords = np.concatenate(blocks) if blocks else np.zeros((0, 3), dtype=np.int64)
        anchor_candidates[c] = coords

        class_active = (active and bool(state.proto.initialized[c])
                        and np.linalg.norm(state.proto.protos[c]) > _COSINE_NORM_FLOOR)
        sampled = []
        if class_active and len(coords):
            ok = np.array([usable[i][px] for (_, i, px) in coords])
            sampled = pairs.sample_anchors(coords[ok], cfg.num_anchors, state.rng)

        keys = []
        for y, cams, flat_rep, use in zip(image_labels, cams_b, flat_reprs, usable):
            if y[c] == 0:
                keys.append(flat_rep[use])
            else:
                keys.append(flat_rep[(cams[c] < cfg.beta).ravel() & use])
        keys = np.vstack(keys) if keys else np.zeros((0, cfg.embed_dim))
        if keys.shape[0]:
            _subsampled_push(state.bank, c, keys, cfg.max_push, state.rng)

        if class_active and len(sampled):
            negatives = pairs.bank_sample(state.bank, c, cfg.num_negatives, state.rng)
            if negatives.shape[0]:
                entries.append((c, sampled, state.proto.protos[c].copy(), negatives))
    return entries, anchor_candidates


# ---------------------------------------------------------------------------
# training steps
# ---------------------------------------------------------------------------

def train_step_ss(state, cfg, batch_l, batch_u, alpha_t, total_iter, out_dir=None):
    """One ss/da step; ``batch_l`` is [(image, label)], ``batch_u`` [image]."""
    images_l = [img for img, _ in batch_l]
    labels_l = [lab for _, lab in batch_l]

    t_out_l = [model_mod.forward(state.teacher, img) for img in images_l]
    t_out_u = [model_mod.forward(state.teacher, img) for img in batch_u]

    if state.proto.all_initialized():
        p_star = [
            prototypes.denoise_predictions(
                o.prob, prototypes.denoise_weights(o.repr, state.proto))
            for o in t_out_u
        ]
    else:
        p_star = [o.prob for o in t_out_u]

    entropies = np.concatenate([entropy(ps, axis=-1).ravel() for ps in p_star]) \
        if p_star else np.zeros(0)
    gamma_t = pseudo.compute_gamma(entropies, alpha_t) if entropies.size else np.inf
    gamma_low = None
    if cfg.negative_mode == "reliable" and entropies.size:
        gamma_low = quantile_threshold(entropies, 1.0 - alpha_t)

    pseudo_u = [pseudo.assign_pseudo_labels(ps, gamma_t) for ps in p_star]
    lambda_u = pseudo.adaptive_weight(np.stack(pseudo_u), cfg.eta) if pseudo_u else 0.0

    fwd_l = [model_mod.forward(state.student, img, return_cache=True) for img in images_l]
    fwd_u = [model_mod.forward(state.student, img, return_cache=True) for img in batch_u]

    active = (state.epoch >= cfg.warm_start_epochs) and cfg.lambda_c > 0
    entries = build_pairs_ss(
        state, cfg, labels_l, [o.prob for o in t_out_l],
        [o.repr for o in t_out_l], p_star, pseudo_u,
        [o.repr for o in t_out_u], gamma_t, gamma_low, active,
        [o.repr for o, _ in fwd_l], [o.repr for o, _ in fwd_u])

    total, loss_s, loss_u, loss_c, grads = step_objective_ss(
        state.student, images_l, labels_l, batch_u, pseudo_u,
        lambda_u, entries, cfg.lambda_c, cfg, fwd_l=fwd_l, fwd_u=fwd_u)
    _check_finite_loss(total, state, out_dir)

    lr = poly_lr(cfg.lr_base, state.iteration, total_iter)
    sgd_update(state.student, grads, state.velocities, lr, cfg.momentum,
               cfg.weight_decay, cfg.head_lr_scale)

    m_eff = min(1.0 - 1.0 / (state.iteration + 1), cfg.ema_momentum)
    state.teacher = model_mod.ema_update(state.teacher, state.student, m_eff)

    for c in range(state.proto.num_classes):
        members = [
            o.repr.reshape(-1, cfg.embed_dim)[(lab == c).ravel()]
            for o, lab in zip(t_out_l, labels_l)
        ] + [
            o.repr.reshape(-1, cfg.embed_dim)[(ps == c).ravel()]
            for o, ps in zip(t_out_u, pseudo_u)
        ]
        members = np.vstack(members)
        prototypes.momentum_update(
            state.proto, c, prototypes.batch_centroid(members), cfg.proto_momentum)

    state.iteration += 1
    return {
        "loss_s": float(loss_s), "loss_u": float(loss_u), "loss_c": float(loss_c),
        "lambda_u": float(lambda_u), "gamma_t": float(gamma_t),
        "alpha_t": float(alpha_t), "lr": float(lr),
        "bank_sizes": state.bank.sizes(),
    }


def train_step_supervised(state, cfg, batch_l, total_iter, out_dir=None):
    """Labeled-data-only baseline step: CE, SGD, EMA; nothing else."""
    images_l = [img for img, _ in batch_l]
    labels_l = [lab for _, lab in batch_l]
    total, loss_s, _, _, grads = step_objective_ss(
        state.student, images_l, labels_l, [], [], 0.0, [], 0.0, cfg)
    _check_finite_loss(total, state, out_dir)

    lr = poly_lr(cfg.lr_base, state.iteration, total_iter)
    sgd_update(state.student, grads, state.velocities, lr, cfg.momentum,
               cfg.weight_decay, cfg.head_lr_scale)
    m_eff = min(1.0 - 1.0 / (state.iteration + 1), cfg.ema_momentum)
    state.teacher = model_mod.ema_update(state.teacher, state.student, m_eff)
    state.iteration += 1
    return {
        "loss_s": float(loss_s), "loss_u": 0.0, "loss_c": 0.0,
        "lambda_u": 0.0, "gamma_t": float("inf"), "alpha_t": 0.0,
        "lr": float(lr), "bank_sizes": state.bank.sizes(),
    }


def train_step_ws(state, cfg, batch, alpha_t, total_iter, out_dir=None):
    """One ws step; ``batch`` is [(image, image_label)].  Single model:
    multi-label classification drives CAMs, CAMs drive pixel targets."""
    images = [img for img, _ in batch]
    image_labels = [y for _, y in batch]

    outs = [model_mod.forward(state.student, img) for img in images]
    cams_b = [cam_mod.compute_cam(o.feat, state.student.cls_w.T) for o in outs]
    pseudo_b = [
        cam_mod.cam_pseudo_labels(cams, y, cfg.beta)
        for cams, y in zip(cams_b, image_labels)
    ]
    lambda_u = cfg.eta

    active = (state.epoch >= cfg.warm_start_epochs) and cfg.lambda_c > 0
    entries, anchor_candidates = build_pairs_ws(
        state, cfg, image_labels, cams_b, [o.repr for o in outs], active)

    total, loss_s, loss_u, loss_c, grads = step_objective_ws(
        state.student, images, image_labels, pseudo_b,
        lambda_u, entries, cfg.lambda_c, cfg)
    _check_finite_loss(total, state, out_dir)

    lr = poly_lr(cfg.lr_base, state.iteration, total_iter)
    sgd_update(state.student, grads, state.velocities, lr, cfg.momentum,
               cfg.weight_decay, cfg.head_lr_scale)

    flat_reprs = [o.repr.reshape(-1, cfg.embed_dim) for o in outs]
    for c in range(state.proto.num_classes):
        coords = anchor_candidates[c]
        if len(coords):
            members = np.stack([flat_reprs[i][px] for (_, i, px) in coords])
        else:
            members = np.zeros((0, cfg.embed_dim))
        prototypes.momentum_update(
            state.proto, c, prototypes.batch_centroid(members), cfg.proto_momentum)

    state.iteration += 1
    return {
        "loss_s": float(loss_s), "loss_u": float(loss_u), "loss_c": float(loss_c),
        "lambda_u": float(lambda_u), "gamma_t": float("inf"),
        "alpha_t": float(alpha_t), "lr": float(lr),
        "bank_sizes": state.bank.sizes(),
    }


def _check_finite_loss(total, state, out_dir):
    if np.isfinite(total):
        return
    if out_dir is not None:
        dump = model_mod.params_to_tensors(state.student, "student")
        tensorio.save_checkpoint(
            os.path.join(out_dir, f"diagnostic_iter{state.iteration}.ckpt"), dump)
    raise TrainingDiverged(f"non-finite loss at iteration {state.iteration}")


# ---------------------------------------------------------------------------
# evaluation, checkpointing, run loop
# ---------------------------------------------------------------------------

def evaluate(params, dataset):
    """Mean IoU of argmax predictions over the validation split."""
    cm = np.zeros((dataset.classes, dataset.classes), dtype=np.int64)
    for i in dataset.val_ids:
        out = model_mod.forward(params, dataset.images[i])
        pred = np.argmax(out.prob, axis=-1).astype(np.int32)
        cm += confusion_matrix(pred, dataset.labels[i], dataset.classes)
    iou, mean = miou_from_confusion(cm)
    return mean, iou


def eval_model(state, cfg):
    """The reported model: EMA teacher for ss/da, the single model for ws."""
    return state.student if state.teacher is None else state.teacher


def state_to_tensors(state):
    t = {}
    t.update(model_mod.params_to_tensors(state.student, "student"))
    if state.teacher is not None:
        t.update(model_mod.params_to_tensors(state.teacher, "teacher"))
    t.update(model_mod.params_to_tensors(state.velocities, "opt"))
    for c in range(state.proto.num_classes):
        t[f"proto.{c}"] = state.proto.protos[c]
    t["proto.initialized"] = state.proto.initialized.astype(np.int32)
    for c in range(state.bank.num_classes):
        t[f"bank.{c}"] = state.bank.as_matrix(c)
    t["trainer.epoch"] = np.array(state.epoch, dtype=np.int32)
    t["trainer.iter"] = np.array(state.iteration, dtype=np.int32)
    t["trainer.best_miou"] = np.array(state.best_miou, dtype=np.float64)
    t["rng.state"] = model_mod.encode_json_tensor(state.rng.bit_generator.state)
    return t


def save_state(path, state):
    tensorio.save_checkpoint(path, state_to_tensors(state))


def load_state(path, cfg, num_classes):
    t = tensorio.load_checkpoint(path)
    state = init_state(cfg, num_classes)
    state.student = model_mod.params_from_tensors(t, "student")
    state.teacher = model_mod.params_from_tensors(t, "teacher") if "teacher.conv1.w" in t else None
    state.velocities = model_mod.params_from_tensors(t, "opt")
    for c in range(num_classes):
        state.proto.protos[c] = t[f"proto.{c}"]
        state.bank.load_matrix(c, t[f"bank.{c}"])
    state.proto.initialized = t["proto.initialized"].astype(bool)
    state.epoch = int(t["trainer.epoch"])
    state.iteration = int(t["trainer.iter"])
    state.best_miou = float(t["trainer.best_miou"])
    state.rng = np.random.default_rng(0)
    state.rng.bit_generator.state = model_mod.decode_json_tensor(t["rng.state"])
    return state


def steps_per_epoch(cfg, dataset):
    b = cfg.batch_size
    if cfg.regime == "ws":
        return -(-len(dataset.labeled_ids) // b)
    if not cfg.use_unlabeled:
        return -(-len(dataset.labeled_ids) // b)
    longest = max(len(dataset.labeled_ids), len(dataset.unlabeled_ids))
    return -(-longest // b)


def _take_batch(ids, perm, step, batch, rng, dataset, with_labels):
    """Round-robin slice of a shuffled id list, with per-image random flip."""
    out = []
    n = len(perm)
    for j in range(batch):
        scene_id = ids[perm[(step * batch + j) % n]]
        image = dataset.images[scene_id]
        flip = rng.random() < 0.5
        if flip:
            image = hflip_image(image)
        if with_labels == "pixel":
            label = dataset.labels[scene_id]
            out.append((image, hflip_label(label) if flip else label))
        elif with_labels == "image":
            out.append((image, dataset.cls[scene_id]))
        else:
            out.append(image)
    return out


def run(cfg, data_dir, out_dir, resume_from=None, stop_after_epoch=None):
    """Train to completion (or ``stop_after_epoch``), logging and
    checkpointing under ``out_dir``.  Returns a small summary dict."""
    manifest = load_manifest(data_dir)
    if manifest["regime"] != cfg.regime:
        raise ConfigError(
            f"dataset regime {manifest['regime']!r} != config regime {cfg.regime!r}")
    dataset = LoadedData(data_dir, manifest, cfg.regime)
    validate_for_classes(cfg, dataset.classes)
    if cfg.regime in ("ss", "da") and cfg.use_unlabeled and not dataset.unlabeled_ids:
        raise ConfigError("dataset has no unlabeled split but train.use_unlabeled is set")

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))

    if resume_from is not None:
        state = load_state(resume_from, cfg, dataset.classes)
        log_mode = "a"
    else:
        state = init_state(cfg, dataset.classes)
        log_mode = "w"

    spe = steps_per_epoch(cfg, dataset)
    total_iter = cfg.total_epochs * spe
    log_path = os.path.join(out_dir, "metrics.jsonl")
    final_miou = None

    with open(log_path, log_mode, encoding="utf-8") as log:
        def emit(record):
            log.write(json.dumps(record) + "\n")
            log.flush()

        if cfg.total_epochs == 0:
            mean, _ = evaluate(eval_model(state, cfg), dataset)
            emit({"epoch": 0, "iter": 0, "val_miou": mean})
            state.best_miou = mean
            save_state(os.path.join(out_dir, "final.ckpt"), state)
            return {"final_val_miou": mean, "best_val_miou": mean, "epochs_run": 0}

        last_epoch = cfg.total_epochs if stop_after_epoch is None \
            else min(stop_after_epoch, cfg.total_epochs)

        for epoch in range(state.epoch, last_epoch):
            alpha_t = pseudo.dpa_alpha(cfg.alpha0, epoch, cfg.total_epochs)
            perm_l = [int(x) for x in state.rng.permutation(len(dataset.labeled_ids))]
            perm_u = [int(x) for x in state.rng.permutation(len(dataset.unlabeled_ids))] \
                if dataset.unlabeled_ids else []

            for step in range(spe):
                if cfg.regime == "ws":
                    batch = _take_batch(dataset.labeled_ids, perm_l, step,
                                        cfg.batch_size, state.rng, dataset, "image")
                    record = train_step_ws(state, cfg, batch, alpha_t, total_iter, out_dir)
                elif not cfg.use_unlabeled:
                    batch_l = _take_batch(dataset.labeled_ids, perm_l, step,
                                          cfg.batch_size, state.rng, dataset, "pixel")
                    record = train_step_supervised(state, cfg, batch_l, total_iter, out_dir)
                else:
                    batch_l = _take_batch(dataset.labeled_ids, perm_l, step,
                                          cfg.batch_size, state.rng, dataset, "pixel")
                    batch_u = _take_batch(dataset.unlabeled_ids, perm_u, step,
                                          cfg.batch_size, state.rng, dataset, None)
                    record = train_step_ss(state, cfg, batch_l, batch_u,
                                           alpha_t, total_iter, out_dir)
                emit({"epoch": epoch, "iter": state.iteration - 1, **record})

            mean, _ = evaluate(eval_model(state, cfg), dataset)
            final_miou = mean
            state.epoch = epoch + 1
            emit({"epoch": epoch, "iter": state.iteration, "val_miou": mean})
            is_best = mean > state.best_miou
            if is_best:
                state.best_miou = mean
            save_state(os.path.join(out_dir, "last.ckpt"), state)
            if is_best:
                save_state(os.path.join(out_dir, "best.ckpt"), state)

        if state.epoch == cfg.total_epochs:
            save_state(os.path.join(out_dir, "final.ckpt"), state)

    return {
        "final_val_miou": final_miou,
        "best_val_miou": state.best_miou,
        "epochs_run": state.epoch,
    }
