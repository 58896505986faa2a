import numpy as np
import pytest

from unrelseg import data as dg
from unrelseg.data import (SceneSpec, apply_domain_shift, generate_dataset,
                           generate_scene, hflip_image, hflip_label,
                           load_manifest, load_scene, make_splits, save_scene)


def small_spec(**kw):
    base = dict(height=32, width=32, classes=6, max_shapes=4, noise_std=0.05)
    base.update(kw)
    return SceneSpec(**base)


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(123, small_spec())
        b = generate_scene(123, small_spec())
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.label, b.label)
        np.testing.assert_array_equal(a.image_label, b.image_label)

    def test_noise_free_determinism_bytes(self):
        spec = small_spec(noise_std=0.0)
        a = generate_scene(9, spec)
        b = generate_scene(9, spec)
        assert a.image.tobytes() == b.image.tobytes()

    def test_presence_vector_matches_histogram(self):
        for seed in range(20):
            scene = generate_scene(seed, small_spec())
            assert scene.label.max() < 6
            present = np.zeros(6, dtype=np.int32)
            for c in range(6):
                present[c] = int(np.any(scene.label == c))
            np.testing.assert_array_equal(scene.image_label, present)

    def test_background_always_present(self):
        for seed in range(20):
            scene = generate_scene(seed, small_spec())
            assert scene.image_label[0] == 1

    def test_image_in_unit_range(self):
        scene = generate_scene(3, small_spec(noise_std=0.3))
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(0, SceneSpec(height=8, width=8))
        with pytest.raises(ValueError):
            generate_scene(0, SceneSpec(classes=2))
        with pytest.raises(ValueError):
            generate_scene(0, SceneSpec(noise_std=-0.1))


class TestDomainShift:
    def test_identity_shift(self):
        scene = generate_scene(5, small_spec())
        shifted = apply_domain_shift(
            scene, {"channel_gain": [1, 1, 1], "brightness": 0.0, "extra_noise": 0.0}, 0)
        np.testing.assert_array_equal(shifted.image, scene.image)

    def test_brightness_saturates(self):
        scene = generate_scene(5, small_spec())
        shifted = apply_domain_shift(
            scene, {"channel_gain": [1, 1, 1], "brightness": 1.0, "extra_noise": 0.0}, 0)
        np.testing.assert_array_equal(shifted.image, np.ones_like(scene.image))

    def test_label_untouched(self):
        scene = generate_scene(5, small_spec())
        shifted = apply_domain_shift(
            scene, {"channel_gain": [0.5, 1.2, 1.5], "brightness": -0.1, "extra_noise": 0.2}, 11)
        np.testing.assert_array_equal(shifted.label, scene.label)

    def test_nonpositive_gain_rejected(self):
        scene = generate_scene(5, small_spec())
        with pytest.raises(ValueError):
            apply_domain_shift(scene, {"channel_gain": [0, 1, 1], "brightness": 0, "extra_noise": 0}, 0)


class TestMakeSplits:
    def test_quarter_of_sixteen(self):
        m = make_splits(16, 0.25, "ss", seed=0)
        assert len(m.labeled_ids) == 4

    def test_fraction_one_has_no_unlabeled(self):
        m = make_splits(8, 1.0, "ss", seed=0)
        assert m.unlabeled_ids == []

    def test_deterministic(self):
        a = make_splits(20, 0.25, "ss", seed=3, n_val=4)
        b = make_splits(20, 0.25, "ss", seed=3, n_val=4)
        assert a == b

    def test_disjoint_and_covering(self):
        m = make_splits(20, 0.3, "da", seed=1, n_val=5)
        all_ids = set(m.labeled_ids) | set(m.unlabeled_ids) | set(m.val_ids)
        assert len(m.labeled_ids) + len(m.unlabeled_ids) + len(m.val_ids) == len(all_ids) == 25

    def test_ws_puts_all_train_ids_in_labeled(self):
        m = make_splits(12, 0.25, "ws", seed=0, n_val=3)
        assert m.labeled_ids == list(range(12))
        assert m.unlabeled_ids == []

    def test_empty_labeled_rejected(self):
        with pytest.raises(ValueError):
            make_splits(16, 0.01, "ss", seed=0)


class TestDatasetOnDisk:
    def test_scene_roundtrip_bit_identical(self, tmp_path):
        scene = generate_scene(2, small_spec())
        save_scene(tmp_path, 0, scene)
        back = load_scene(tmp_path, 0)
        assert back.image.tobytes() == scene.image.tobytes()
        np.testing.assert_array_equal(back.label, scene.label)
        np.testing.assert_array_equal(back.image_label, scene.image_label)

    def test_generate_dataset_manifest(self, tmp_path):
        manifest = generate_dataset(tmp_path, seed=1, regime="ss",
                                    spec=small_spec(), n_train=8, n_val=2,
                                    labeled_fraction=0.5)
        assert len(manifest["labeled_ids"]) == 4
        assert len(manifest["unlabeled_ids"]) == 4
        assert manifest["val_ids"] == [8, 9]
        assert load_manifest(tmp_path) == manifest

    def test_da_dataset_shifts_only_target(self, tmp_path):
        shift = {"channel_gain": [0.5, 1.0, 1.5], "brightness": 0.2, "extra_noise": 0.0}
        manifest = generate_dataset(tmp_path, seed=1, regime="da",
                                    spec=small_spec(noise_std=0.0), n_train=8,
                                    n_val=2, labeled_fraction=0.5, shift=shift)
        # source scenes must match a fresh unshifted render, target must not
        for i in manifest["labeled_ids"]:
            seed = int(np.random.SeedSequence([1, i]).generate_state(1, np.uint64)[0])
            fresh = generate_scene(seed, small_spec(noise_std=0.0))
            np.testing.assert_array_equal(load_scene(tmp_path, i).image, fresh.image)
        for i in manifest["unlabeled_ids"] + manifest["val_ids"]:
            seed = int(np.random.SeedSequence([1, i]).generate_state(1, np.uint64)[0])
            fresh = generate_scene(seed, small_spec(noise_std=0.0))
            assert not np.array_equal(load_scene(tmp_path, i).image, fresh.image)


class TestFlip:
    def test_flip_commutes_with_labels(self):
        # IoU of flip(label) against label-of-flipped-image is exactly 1
        scene = generate_scene(4, small_spec())
        flipped_img = hflip_image(scene.image)
        flipped_lab = hflip_label(scene.label)
        np.testing.assert_array_equal(flipped_img[:, ::-1, :], scene.image)
        np.testing.assert_array_equal(flipped_lab[:, ::-1], scene.label)

    def test_double_flip_is_identity(self):
        scene = generate_scene(4, small_spec())
        np.testing.assert_array_equal(hflip_image(hflip_image(scene.image)), scene.image)
