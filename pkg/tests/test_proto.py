import numpy as np
import pytest

from unrelseg.prototypes import (PrototypeBank, batch_centroid,
                                 denoise_predictions, denoise_weights,
                                 momentum_update)


def full_bank(protos):
    protos = np.asarray(protos, dtype=np.float64)
    bank = PrototypeBank(protos.shape[0], protos.shape[1])
    bank.protos = protos.copy()
    bank.initialized[:] = True
    return bank


class TestBatchCentroid:
    def test_mean(self):
        np.testing.assert_allclose(batch_centroid([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])

    def test_singleton(self):
        np.testing.assert_array_equal(batch_centroid([[2.0, 3.0]]), [2.0, 3.0])

    def test_empty_signals_no_update(self):
        assert batch_centroid(np.zeros((0, 4))) is None


class TestMomentumUpdate:
    def test_standard_blend(self):
        bank = full_bank([[1.0, 0.0]])
        momentum_update(bank, 0, np.array([0.0, 1.0]), 0.999)
        np.testing.assert_allclose(bank.protos[0], [0.999, 0.001])

    def test_fixed_point(self):
        bank = full_bank([[0.3, 0.7]])
        momentum_update(bank, 0, np.array([0.3, 0.7]), 0.9)
        np.testing.assert_allclose(bank.protos[0], [0.3, 0.7])

    def test_m_zero_replaces(self):
        bank = full_bank([[1.0, 1.0]])
        momentum_update(bank, 0, np.array([5.0, 6.0]), 0.0)
        np.testing.assert_array_equal(bank.protos[0], [5.0, 6.0])

    def test_first_update_copies_and_marks(self):
        bank = PrototypeBank(2, 2)
        assert not bank.initialized[1]
        momentum_update(bank, 1, np.array([2.0, 2.0]), 0.999)
        assert bank.initialized[1]
        np.testing.assert_array_equal(bank.protos[1], [2.0, 2.0])

    def test_none_centroid_keeps_state(self):
        bank = PrototypeBank(2, 2)
        momentum_update(bank, 0, None, 0.9)
        assert not bank.initialized[0]

    def test_bad_momentum_rejected(self):
        bank = full_bank([[1.0, 0.0]])
        with pytest.raises(ValueError):
            momentum_update(bank, 0, np.array([0.0, 1.0]), 1.2)

    def test_norm_bounded_by_history(self):
        rng = np.random.default_rng(0)
        bank = PrototypeBank(1, 4)
        max_norm = 0.0
        for _ in range(50):
            centroid = rng.normal(size=4)
            max_norm = max(max_norm, np.linalg.norm(centroid))
            momentum_update(bank, 0, centroid, 0.9)
            assert np.linalg.norm(bank.protos[0]) <= max_norm + 1e-12


class TestDenoiseWeights:
    def test_equidistant_is_uniform(self):
        bank = full_bank([[1.0, 0.0], [-1.0, 0.0]])
        w = denoise_weights(np.array([0.0, 5.0]), bank)
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_two_class_distances_zero_one(self):
        bank = full_bank([[0.0, 0.0], [1.0, 0.0]])
        w = denoise_weights(np.array([0.0, 0.0]), bank)
        expected = np.exp([0.0, -1.0]) / np.exp([0.0, -1.0]).sum()
        np.testing.assert_allclose(w, expected, rtol=1e-12)
        np.testing.assert_allclose(w, [0.7311, 0.2689], atol=1e-4)

    def test_pixel_at_prototype_dominates(self):
        bank = full_bank([[0.0, 0.0], [25.0, 0.0], [0.0, 25.0]])
        w = denoise_weights(np.array([0.0, 0.0]), bank)
        assert w[0] > 1.0 - 1e-8

    def test_uninitialized_rejected(self):
        bank = PrototypeBank(3, 2)
        bank.initialized[:2] = True
        with pytest.raises(ValueError):
            denoise_weights(np.array([0.0, 0.0]), bank)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        protos = rng.normal(size=(4, 3))
        pixel = rng.normal(size=3)
        w = denoise_weights(pixel, full_bank(protos))
        perm = [2, 0, 3, 1]
        w_perm = denoise_weights(pixel, full_bank(protos[perm]))
        np.testing.assert_allclose(w_perm, w[perm], rtol=1e-12)

    def test_vectorized_matches_per_pixel(self):
        rng = np.random.default_rng(2)
        protos = rng.normal(size=(3, 4))
        bank = full_bank(protos)
        stack = rng.normal(size=(2, 5, 4))
        w = denoise_weights(stack, bank)
        assert w.shape == (2, 5, 3)
        for i in range(2):
            for j in range(5):
                np.testing.assert_allclose(w[i, j], denoise_weights(stack[i, j], bank))


class TestDenoisePredictions:
    def test_uniform_weights_identity(self):
        rng = np.random.default_rng(3)
        prob = rng.dirichlet(np.ones(4), size=(5, 5))
        weights = np.full_like(prob, 0.25)
        out = denoise_predictions(prob, weights)
        np.testing.assert_allclose(out, prob, atol=1e-12)

    def test_uniform_prob_follows_weights(self):
        prob = np.full((1, 1, 3), 1.0 / 3.0)
        weights = np.array([[[0.2, 0.5, 0.3]]])
        out = denoise_predictions(prob, weights)
        assert np.argmax(out) == 1

    def test_denoising_can_flip_argmax(self):
        prob = np.array([[[0.6, 0.4]]])
        weights = np.array([[[0.25, 0.75]]])
        out = denoise_predictions(prob, weights)
        np.testing.assert_allclose(out[0, 0], [1.0 / 3.0, 2.0 / 3.0], rtol=1e-12)
        assert np.argmax(out[0, 0]) == 1

    def test_zero_product_falls_back(self):
        prob = np.array([[[0.0, 1.0]]])
        weights = np.array([[[1.0, 0.0]]])
        out = denoise_predictions(prob, weights)
        np.testing.assert_array_equal(out[0, 0], prob[0, 0])

    def test_output_on_simplex(self):
        rng = np.random.default_rng(4)
        prob = rng.dirichlet(np.ones(5), size=(4, 4))
        weights = rng.dirichlet(np.ones(5), size=(4, 4))
        out = denoise_predictions(prob, weights)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
