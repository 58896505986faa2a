import numpy as np
import pytest

from unrelseg.data import IGNORE
from unrelseg.numerics import category_order, entropy
from unrelseg.pairs import (MemoryBank, anchor_mask_labeled,
                            anchor_mask_unlabeled, bank_push, bank_sample,
                            negative_mask_labeled, negative_mask_unlabeled,
                            qualify_negative_labeled, qualify_negative_unlabeled,
                            qualify_negative_ws, sample_anchors)


def rank_of(p, c):
    return int(category_order(np.asarray(p))[c])


class TestLabeledNegativePredicate:
    def test_own_class_never_negative(self):
        p = [0.7, 0.2, 0.1]
        assert not qualify_negative_labeled(0, p, 0, r_l=3)

    def test_top_ranked_other_class(self):
        p = [0.7, 0.2, 0.1]
        assert qualify_negative_labeled(1, p, 0, r_l=3)  # rank(0) == 0

    def test_rank_boundary_strict(self):
        # class with rank exactly r_l is excluded
        p = [0.4, 0.3, 0.2, 0.1]
        assert rank_of(p, 3) == 3
        assert not qualify_negative_labeled(0, p, 3, r_l=3)
        assert qualify_negative_labeled(0, p, 2, r_l=3)

    def test_matches_brute_force_on_random_batches(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c_num = int(rng.integers(3, 7))
            labels = rng.integers(0, c_num, size=(5, 5)).astype(np.int32)
            prob = rng.dirichlet(np.ones(c_num), size=(5, 5))
            r_l = int(rng.integers(1, c_num))
            c = int(rng.integers(0, c_num))
            mask = negative_mask_labeled(labels, prob, c, r_l)
            for i in range(5):
                for j in range(5):
                    want = (labels[i, j] != c) and (0 <= rank_of(prob[i, j], c) < r_l)
                    assert bool(mask[i, j]) == want


class TestUnlabeledNegativePredicate:
    def test_reliable_pixel_never_negative(self):
        p = [0.5, 0.3, 0.1, 0.1]
        h = float(entropy(p))
        assert not qualify_negative_unlabeled(h, h, p, 2, r_l=1, r_h=4)  # H == gamma

    def test_rank_window(self):
        p = [0.4, 0.3, 0.2, 0.1]
        gamma = 0.1
        h = float(entropy(p))
        assert h > gamma
        assert not qualify_negative_unlabeled(h, gamma, p, 0, 1, 3)  # rank 0 < r_l
        assert qualify_negative_unlabeled(h, gamma, p, 1, 1, 3)      # rank 1 inclusive
        assert qualify_negative_unlabeled(h, gamma, p, 2, 1, 3)
        assert not qualify_negative_unlabeled(h, gamma, p, 3, 1, 3)  # rank 3 >= r_h

    def test_matches_brute_force_on_random_batches(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            c_num = int(rng.integers(4, 7))
            prob = rng.dirichlet(np.ones(c_num), size=(4, 6))
            gamma = float(rng.uniform(0.2, np.log(c_num)))
            r_l = int(rng.integers(1, c_num - 1))
            r_h = int(rng.integers(r_l + 1, c_num + 1))
            c = int(rng.integers(0, c_num))
            mask = negative_mask_unlabeled(prob, gamma, c, r_l, r_h)
            for i in range(4):
                for j in range(6):
                    h = float(entropy(prob[i, j]))
                    want = h > gamma and r_l <= rank_of(prob[i, j], c) < r_h
                    assert bool(mask[i, j]) == want

    def test_reliable_mode_flips_entropy_test(self):
        rng = np.random.default_rng(2)
        prob = rng.dirichlet(np.ones(4), size=(5, 5))
        h = entropy(prob, axis=-1)
        gamma_low = float(np.median(h))
        mask = negative_mask_unlabeled(prob, None, 1, 1, 4,
                                       reliable_mode=True, gamma_low=gamma_low)
        order = category_order(prob)
        want = (h < gamma_low) & (order[..., 1] >= 1) & (order[..., 1] < 4)
        np.testing.assert_array_equal(mask, want)


class TestWsNegativePredicate:
    def test_absent_class_any_cam(self):
        assert qualify_negative_ws([1, 0, 1], cam_value=0.99, c=1, beta=0.5)

    def test_present_class_boundary_strict(self):
        assert not qualify_negative_ws([1, 1, 0], cam_value=0.7, c=1, beta=0.7)

    def test_present_class_low_cam(self):
        assert qualify_negative_ws([1, 1, 0], cam_value=0.1, c=1, beta=0.7)

    def test_cam_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            qualify_negative_ws([1, 0], cam_value=1.5, c=0, beta=0.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            c_num = int(rng.integers(3, 6))
            present = rng.integers(0, 2, size=c_num)
            cams = rng.random(size=(c_num, 4, 4))
            beta = float(rng.uniform(0.2, 0.8))
            for c in range(c_num):
                for i in range(4):
                    for j in range(4):
                        got = qualify_negative_ws(present, cams[c, i, j], c, beta)
                        want = present[c] == 0 or cams[c, i, j] < beta
                        assert got == want


class TestAnchorMasks:
    def test_labeled_anchor_requires_both_conditions(self):
        labels = np.array([[0, 1], [0, 0]], dtype=np.int32)
        prob = np.zeros((2, 2, 2))
        prob[..., 0] = [[0.9, 0.9], [0.3, 0.2]]
        prob[..., 1] = 1.0 - prob[..., 0]
        mask = anchor_mask_labeled(labels, prob, 0, delta_p=0.3)
        np.testing.assert_array_equal(mask, [[True, False], [False, False]])

    def test_strict_probability_threshold(self):
        labels = np.zeros((1, 1), dtype=np.int32)
        prob = np.array([[[0.3, 0.7]]])
        assert not anchor_mask_labeled(labels, prob, 0, 0.3)[0, 0]

    def test_unlabeled_anchor_requires_reliable_pseudo(self):
        pseudo = np.array([[0, IGNORE]], dtype=np.int32)
        prob = np.array([[[0.8, 0.2], [0.9, 0.1]]])
        mask = anchor_mask_unlabeled(pseudo, prob, 0, 0.3)
        np.testing.assert_array_equal(mask, [[True, False]])


class TestMemoryBank:
    def test_fifo_eviction(self):
        bank = MemoryBank(1, 2, [5])
        keys = np.arange(14, dtype=np.float64).reshape(7, 2)
        bank_push(bank, 0, keys)
        assert bank.size(0) == 5
        np.testing.assert_array_equal(bank.as_matrix(0), keys[2:])

    def test_push_nothing(self):
        bank = MemoryBank(1, 2, [5])
        bank_push(bank, 0, np.zeros((0, 2)))
        assert bank.size(0) == 0

    def test_dimension_mismatch_rejected(self):
        bank = MemoryBank(1, 3, [5])
        with pytest.raises(ValueError):
            bank_push(bank, 0, np.ones((2, 2)))

    def test_capacity_never_exceeded_random_ops(self):
        rng = np.random.default_rng(4)
        bank = MemoryBank(3, 2, [7, 3, 12])
        for _ in range(2000):
            c = int(rng.integers(0, 3))
            if rng.random() < 0.7:
                n = int(rng.integers(1, 9))
                bank_push(bank, c, rng.normal(size=(n, 2)))
            else:
                bank_sample(bank, c, int(rng.integers(1, 6)), rng)
            for cc, cap in enumerate([7, 3, 12]):
                assert bank.size(cc) <= cap

    def test_sample_without_replacement_when_full(self):
        rng = np.random.default_rng(5)
        bank = MemoryBank(1, 2, [10])
        keys = np.arange(20, dtype=np.float64).reshape(10, 2)
        bank_push(bank, 0, keys)
        out = bank_sample(bank, 0, 10, rng)
        assert out.shape == (10, 2)
        assert len({tuple(row) for row in out}) == 10  # all distinct

    def test_sample_with_replacement_when_short(self):
        rng = np.random.default_rng(6)
        bank = MemoryBank(1, 2, [10])
        bank_push(bank, 0, np.array([[1.0, 2.0]]))
        out = bank_sample(bank, 0, 50, rng)
        assert out.shape == (50, 2)
        np.testing.assert_array_equal(out, np.tile([1.0, 2.0], (50, 1)))

    def test_sample_empty_returns_empty(self):
        rng = np.random.default_rng(7)
        bank = MemoryBank(1, 2, [10])
        assert bank_sample(bank, 0, 5, rng).shape == (0, 2)

    def test_samples_come_from_pushed_keys(self):
        rng = np.random.default_rng(8)
        bank = MemoryBank(1, 3, [64])
        pushed = set()
        for _ in range(50):
            keys = rng.normal(size=(int(rng.integers(1, 6)), 3))
            for row in keys:
                pushed.add(tuple(row))
            bank_push(bank, 0, keys)
            out = bank_sample(bank, 0, 8, rng)
            for row in out:
                assert tuple(row) in pushed


class TestSampleAnchors:
    def test_exact_size_is_permutation(self):
        rng = np.random.default_rng(9)
        cands = [(0, 0, i) for i in range(6)]
        out = sample_anchors(cands, 6, rng)
        assert sorted(out) == cands

    def test_empty_skips(self):
        rng = np.random.default_rng(10)
        assert sample_anchors([], 4, rng) == []

    def test_shortage_with_replacement(self):
        rng = np.random.default_rng(11)
        cands = [(0, 0, 1), (0, 0, 2)]
        out = sample_anchors(cands, 7, rng)
        assert len(out) == 7
        assert set(out) <= set(cands)

    def test_membership_over_many_seeds(self):
        cands = [(0, i, j) for i in range(3) for j in range(4)]
        for seed in range(30):
            rng = np.random.default_rng(seed)
            out = sample_anchors(cands, 5, rng)
            assert set(out) <= set(cands)

    def test_deterministic_given_seed(self):
        cands = [(0, 0, i) for i in range(20)]
        a = sample_anchors(cands, 5, np.random.default_rng(12))
        b = sample_anchors(cands, 5, np.random.default_rng(12))
        assert a == b
