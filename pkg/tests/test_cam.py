import numpy as np
import pytest

from unrelseg.cam import cam_pseudo_labels, compute_cam
from unrelseg.numerics import minmax_normalize


class TestComputeCam:
    def test_one_hot_weight_selects_channel(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(6, 6, 4))
        w = np.zeros((3, 4))
        w[1, 2] = 1.0
        cams = compute_cam(feats, w)
        np.testing.assert_allclose(cams[1], minmax_normalize(np.maximum(feats[..., 2], 0.0)))

    def test_all_negative_preactivation_stays_zero(self):
        feats = -np.ones((4, 4, 3))
        w = np.ones((2, 3))
        cams = compute_cam(feats, w)
        np.testing.assert_array_equal(cams, 0.0)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(1)
        feats = rng.normal(size=(5, 5, 4))
        w = rng.normal(size=(3, 4))
        cams = compute_cam(feats, w)
        cams_scaled = compute_cam(feats, 2.0 * w)
        np.testing.assert_allclose(cams_scaled, cams, atol=1e-12)

    def test_output_in_unit_range(self):
        rng = np.random.default_rng(2)
        cams = compute_cam(rng.normal(size=(8, 8, 5)), rng.normal(size=(4, 5)))
        assert cams.min() >= 0.0 and cams.max() <= 1.0

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compute_cam(np.zeros((4, 4, 3)), np.zeros((2, 5)))


class TestCamPseudoLabels:
    def test_all_below_beta_is_background(self):
        cams = np.full((3, 4, 4), 0.2)
        labels = cam_pseudo_labels(cams, [1, 1, 1], beta=0.7)
        np.testing.assert_array_equal(labels, 0)

    def test_single_present_class_region(self):
        cams = np.zeros((3, 4, 4))
        cams[2, 1:3, 1:3] = 0.9
        labels = cam_pseudo_labels(cams, [1, 0, 1], beta=0.7)
        want = np.zeros((4, 4), dtype=np.int32)
        want[1:3, 1:3] = 2
        np.testing.assert_array_equal(labels, want)

    def test_absent_class_never_assigned(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            c_num = int(rng.integers(3, 6))
            cams = rng.random(size=(c_num, 5, 5))
            present = rng.integers(0, 2, size=c_num)
            present[0] = 1
            labels = cam_pseudo_labels(cams, present, beta=0.5)
            for c in range(c_num):
                if present[c] == 0:
                    assert not np.any(labels == c)

    def test_overlap_resolved_by_argmax_with_low_index_ties(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            cams = rng.random(size=(4, 6, 6))
            present = np.array([1, 1, 1, 1])
            beta = 0.4
            labels = cam_pseudo_labels(cams, present, beta)
            for i in range(6):
                for j in range(6):
                    vals = cams[1:, i, j]
                    best = int(np.argmax(vals)) + 1   # ties -> lower class
                    want = best if vals.max() > beta else 0
                    assert labels[i, j] == want

    def test_raising_beta_shrinks_foreground(self):
        rng = np.random.default_rng(5)
        cams = rng.random(size=(4, 8, 8))
        present = np.array([1, 1, 1, 1])
        prev_fg = None
        for beta in (0.2, 0.4, 0.6, 0.8):
            labels = cam_pseudo_labels(cams, present, beta)
            fg = set(map(tuple, np.argwhere(labels > 0)))
            if prev_fg is not None:
                assert fg <= prev_fg
            prev_fg = fg

    def test_bad_beta_rejected(self):
        with pytest.raises(ValueError):
            cam_pseudo_labels(np.zeros((2, 3, 3)), [1, 1], beta=0.0)
