"""Synthetic "shapes-world" segmentation scenes and split manifests.

A scene is a noisy color image of axis-aligned rectangles and discs over a
flat background.  Each shape carries one foreground class; classes render
with distinct base colors, some of which are deliberately close so that
class boundaries produce genuinely ambiguous pixels.  Everything is
generated from explicit seeds and is bit-reproducible.

On-disk layout of a dataset directory:

    scene_<id>_img.u2tn   float64 (H, W, 3) image in [0, 1]
    scene_<id>_lab.u2tn   int32   (H, W) ground-truth classes
    scene_<id>_cls.u2tn   int32   (C,) image-level presence vector
    manifest.json         splits, regime, generation spec, seed
"""

import dataclasses
import json
import os

import numpy as np

from . import tensorio

IGNORE = -1

# Base colors for background + 5 foreground classes.  Classes 1/2 and 3/4
# are near-neighbours in RGB (they differ by ~2 noise sigmas on one
# channel) so their pixels stay genuinely ambiguous under noise, while
# class 5 is chromatically isolated.
_PALETTE6 = np.array(
    [
        [0.40, 0.40, 0.40],
        [0.75, 0.25, 0.25],
        [0.75, 0.45, 0.25],
        [0.25, 0.35, 0.75],
        [0.25, 0.55, 0.75],
        [0.25, 0.70, 0.30],
    ]
)


def class_palette(num_classes):
    """Base color per class; procedural hues beyond the built-in six."""
    if num_classes <= len(_PALETTE6):
        return _PALETTE6[:num_classes].copy()
    extra = []
    for k in range(num_classes - len(_PALETTE6)):
        hue = (0.61803398875 * (k + 1)) % 1.0
        extra.append(_hsv_to_rgb(hue, 0.55, 0.75))
    return np.vstack([_PALETTE6, np.array(extra)])


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


@dataclasses.dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    classes: int = 6
    max_shapes: int = 6
    noise_std: float = 0.10
    # Per-scene photometric jitter (random global gain/brightness).  A small
    # labeled split cannot cover the appearance variation this induces, so
    # the unlabeled pool carries real information.
    jitter: float = 0.12

    def validate(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("canvas must be at least 16x16")
        if self.classes < 3:
            raise ValueError("need at least 3 classes (background + 2)")
        if self.max_shapes < 0:
            raise ValueError("max_shapes must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")


@dataclasses.dataclass
class Scene:
    image: np.ndarray       # (H, W, 3) float64 in [0, 1]
    label: np.ndarray       # (H, W) int32
    image_label: np.ndarray  # (C,) int32 presence vector


def generate_scene(seed, spec):
    """Render one scene deterministically from ``seed``.

    Foreground classes are drawn with geometrically decaying weights so the
    high class indices are rare; later shapes paint over earlier ones.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w, c = spec.height, spec.width, spec.classes
    palette = class_palette(c)

    label = np.zeros((h, w), dtype=np.int32)
    lo = min(3, spec.max_shapes)
    n_shapes = int(rng.integers(lo, spec.max_shapes + 1)) if spec.max_shapes > 0 else 0
    fg = np.arange(1, c)
    weights = 0.62 ** (fg - 1)
    weights /= weights.sum()

    max_half = min(h, w) // 4
    if max_half < 3:
        raise ValueError("canvas too small for the minimum shape size")

    for _ in range(n_shapes):
        cls = int(rng.choice(fg, p=weights))
        half_y = int(rng.integers(3, max_half + 1))
        half_x = int(rng.integers(3, max_half + 1))
        if 2 * half_y >= h or 2 * half_x >= w:
            raise ValueError("shape larger than canvas")
        cy = int(rng.integers(half_y, h - half_y))
        cx = int(rng.integers(half_x, w - half_x))
        if rng.random() < 0.5:
            label[cy - half_y : cy + half_y + 1, cx - half_x : cx + half_x + 1] = cls
        else:
            yy, xx = np.ogrid[:h, :w]
            r = min(half_y, half_x)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            label[mask] = cls

    image = palette[label]
    if spec.jitter > 0:
        gain = rng.uniform(1.0 - spec.jitter, 1.0 + spec.jitter, size=3)
        brightness = rng.uniform(-spec.jitter / 2.0, spec.jitter / 2.0)
        image = image * gain + brightness
    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    present = np.zeros(c, dtype=np.int32)
    present[np.unique(label)] = 1
    return Scene(image=image.astype(np.float64), label=label, image_label=present)


def apply_domain_shift(scene, shift, seed):
    """Photometric shift: gain per channel, brightness offset, extra noise.

    The label map is untouched; the image is clamped back to [0, 1].
    """
    gain = np.asarray(shift["channel_gain"], dtype=np.float64)
    if gain.shape != (3,) or np.any(gain <= 0):
        raise ValueError("channel_gain must be a positive 3-vector")
    brightness = float(shift["brightness"])
    extra = float(shift["extra_noise"])
    rng = np.random.default_rng(seed)
    image = scene.image * gain + brightness
    if extra > 0:
        image = image + rng.normal(0.0, extra, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return Scene(image=image, label=scene.label.copy(), image_label=scene.image_label.copy())


@dataclasses.dataclass
class SplitManifest:
    labeled_ids: list
    unlabeled_ids: list
    val_ids: list
    regime: str


def make_splits(n_scenes, labeled_fraction, regime, seed, n_val=0):
    """Shuffle train ids and split; val ids follow the train block.

    In the ws regime every train scene is "labeled" (only the image-level
    vector is visible to the trainer; pixel labels stay on disk for
    evaluation only).
    """
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError("labeled_fraction must be in (0, 1]")
    if n_scenes < 4:
        raise ValueError("need at least 4 train scenes")
    regime = regime.lower()
    if regime not in ("ss", "da", "ws"):
        raise ValueError(f"unknown regime {regime!r}")

    ids = list(range(n_scenes))
    val_ids = list(range(n_scenes, n_scenes + n_val))
    if regime == "ws":
        return SplitManifest(labeled_ids=ids, unlabeled_ids=[], val_ids=val_ids, regime=regime)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4242]))
    perm = [int(i) for i in rng.permutation(n_scenes)]
    n_labeled = int(round(labeled_fraction * n_scenes))
    if n_labeled == 0:
        raise ValueError("labeled split would be empty")
    return SplitManifest(
        labeled_ids=sorted(perm[:n_labeled]),
        unlabeled_ids=sorted(perm[n_labeled:]),
        val_ids=val_ids,
        regime=regime,
    )


DEFAULT_SHIFT = {"channel_gain": [0.72, 1.0, 1.38], "brightness": 0.12, "extra_noise": 0.04}


def generate_dataset(out_dir, seed, regime, spec=None, n_train=24, n_val=8,
                     labeled_fraction=0.25, shift=None):
    """Generate scenes + manifest under ``out_dir``.

    In the da regime the labeled split keeps the source style while the
    unlabeled and val scenes get the photometric domain shift.
    """
    spec = spec or SceneSpec()
    spec.validate()
    regime = regime.lower()
    splits = make_splits(n_train, labeled_fraction, regime, seed, n_val=n_val)
    if regime == "da" and shift is None:
        shift = DEFAULT_SHIFT

    os.makedirs(out_dir, exist_ok=True)
    shifted = set(splits.unlabeled_ids) | set(splits.val_ids) if regime == "da" else set()
    total = n_train + n_val
    for i in range(total):
        scene_seed = int(np.random.SeedSequence([int(seed), i]).generate_state(1, np.uint64)[0])
        scene = generate_scene(scene_seed, spec)
        if i in shifted:
            shift_seed = int(np.random.SeedSequence([int(seed), i, 1]).generate_state(1, np.uint64)[0])
            scene = apply_domain_shift(scene, shift, shift_seed)
        save_scene(out_dir, i, scene)

    manifest = {
        "regime": regime,
        "seed": int(seed),
        "spec": {
            "height": spec.height,
            "width": spec.width,
            "classes": spec.classes,
            "max_shapes": spec.max_shapes,
            "noise_std": spec.noise_std,
            "jitter": spec.jitter,
            "n_train": n_train,
            "n_val": n_val,
            "labeled_fraction": labeled_fraction,
            "shift": shift,
        },
        "labeled_ids": splits.labeled_ids,
        "unlabeled_ids": splits.unlabeled_ids,
        "val_ids": splits.val_ids,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def save_scene(out_dir, scene_id, scene):
    tensorio.write_tensor(os.path.join(out_dir, f"scene_{scene_id}_img.u2tn"), scene.image)
    tensorio.write_tensor(os.path.join(out_dir, f"scene_{scene_id}_lab.u2tn"), scene.label)
    tensorio.write_tensor(os.path.join(out_dir, f"scene_{scene_id}_cls.u2tn"), scene.image_label)


def load_scene(data_dir, scene_id, with_label=True):
    image = tensorio.read_tensor(os.path.join(data_dir, f"scene_{scene_id}_img.u2tn"))
    cls = tensorio.read_tensor(os.path.join(data_dir, f"scene_{scene_id}_cls.u2tn"))
    label = None
    if with_label:
        label = tensorio.read_tensor(os.path.join(data_dir, f"scene_{scene_id}_lab.u2tn"))
    return Scene(image=image, label=label, image_label=cls)


def load_manifest(data_dir):
    with open(os.path.join(data_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def hflip_image(image):
    return image[:, ::-1, :].copy()


def hflip_label(label):
    return label[:, ::-1].copy()
