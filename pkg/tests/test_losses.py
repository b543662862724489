import numpy as np
import pytest

from mqn.losses import (LossWeights, SeededFeatureExtractor, combined_loss,
                        cosine_loss, fr_loss, l1_loss, l2_loss)
from mqn.tensor import ShapeError

from oracles import cosine_ref, l1_ref, l2_ref


@pytest.fixture(scope="module")
def fx():
    return SeededFeatureExtractor()


def _pairs(rng, n=10, shape=(6, 6, 3)):
    for _ in range(n):
        yield (rng.random(shape).astype(np.float32),
               rng.random(shape).astype(np.float32))


class TestL1:
    def test_identical_zero(self, rng):
        x = rng.random((4, 4, 3)).astype(np.float32)
        assert l1_loss(x, x) == 0.0

    def test_constant_offset(self, rng):
        x = rng.random((4, 4, 3)).astype(np.float32)
        assert abs(l1_loss(x, (x + 0.5).astype(np.float32)) - 0.5) < 1e-6

    def test_matches_extended_precision(self, rng):
        for a, b in _pairs(rng):
            assert abs(l1_loss(a, b) - l1_ref(a, b)) < 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestL2:
    def test_identical_zero(self, rng):
        x = rng.random((4, 4, 3)).astype(np.float32)
        assert l2_loss(x, x) == 0.0

    def test_single_pixel_norm(self):
        a = np.zeros((1, 1, 3), np.float32)
        b = np.zeros((1, 1, 3), np.float32)
        b[0, 0, 0] = 3.0
        # rms over 3 elements: sqrt(9/3)
        assert abs(l2_loss(a, b) - np.sqrt(3.0)) < 1e-7

    def test_scalar_diff(self):
        a = np.zeros((1, 1, 1, 1), np.float32)
        b = np.full((1, 1, 1, 1), 3.0, np.float32)
        assert abs(l2_loss(a, b) - 3.0) < 1e-7

    def test_matches_extended_precision(self, rng):
        for a, b in _pairs(rng):
            assert abs(l2_loss(a, b) - l2_ref(a, b)) < 1e-6


class TestCosine:
    def test_positive_scaling_invariance(self, rng):
        x = rng.random((5, 5, 3)).astype(np.float32) + 0.1
        assert cosine_loss(x, (2.5 * x).astype(np.float32)) < 1e-7

    def test_orthogonal_pixels(self):
        a = np.zeros((2, 2, 3), np.float32)
        b = np.zeros((2, 2, 3), np.float32)
        a[..., 0] = 1.0
        b[..., 1] = 1.0
        assert abs(cosine_loss(a, b) - 1.0) < 1e-7

    def test_black_vs_black_agrees(self):
        z = np.zeros((3, 3, 3), np.float32)
        assert cosine_loss(z, z) == 0.0

    def test_matches_extended_precision(self, rng):
        for a, b in _pairs(rng):
            assert abs(cosine_loss(a, b) - cosine_ref(a, b)) < 1e-6

    def test_needs_three_channels(self):
        with pytest.raises(ShapeError):
            cosine_loss(np.zeros((2, 2, 4)), np.zeros((2, 2, 4)))


class TestFeatureReconstruction:
    def test_identical_zero(self, fx, rng):
        x = rng.random((16, 16, 3)).astype(np.float32)
        assert fr_loss(x, x, fx) == 0.0

    def test_identity_extractor_reduces_to_l1(self, rng):
        a, b = next(_pairs(rng))
        ident = lambda img: [np.asarray(img)]
        assert abs(fr_loss(a, b, ident) - l1_loss(a, b)) < 1e-9

    def test_matches_independent_recomputation(self, fx, rng):
        a = rng.random((16, 16, 3)).astype(np.float32)
        b = rng.random((16, 16, 3)).astype(np.float32)
        fa = fx(a)
        fb = fx(b)
        want = sum(float(np.mean(np.abs(x.astype(np.float64) - y.astype(np.float64))))
                   for x, y in zip(fa, fb))
        assert abs(fr_loss(a, b, fx) - want) < 1e-5

    def test_extractor_three_stages_deterministic(self, fx, rng):
        x = rng.random((32, 32, 3)).astype(np.float32)
        feats = fx(x)
        assert len(feats) == 3
        assert feats[0].shape == (1, 16, 16, 8)
        assert feats[2].shape == (1, 4, 4, 24)
        feats2 = SeededFeatureExtractor()(x)
        for f1, f2 in zip(feats, feats2):
            assert np.array_equal(f1, f2)


class TestCombined:
    def test_identical_zero(self, fx, rng):
        x = rng.random((8, 8, 3)).astype(np.float32)
        assert combined_loss(x, x, fx) == 0.0

    def test_l1_projection(self, fx, rng):
        a, b = next(_pairs(rng))
        w = LossWeights(1.0, 0.0, 0.0, 0.0)
        assert abs(combined_loss(a, b, fx, w) - l1_loss(a, b)) < 1e-12

    def test_default_weights_recomposition(self, fx, rng):
        a = rng.random((8, 8, 3)).astype(np.float32)
        b = rng.random((8, 8, 3)).astype(np.float32)
        want = (1.0 * l1_loss(a, b) + 1.0 * l2_loss(a, b)
                + 0.1 * cosine_loss(a, b) + 0.05 * fr_loss(a, b, fx))
        assert abs(combined_loss(a, b, fx) - want) < 1e-6
        assert LossWeights() == LossWeights(1.0, 1.0, 0.1, 0.05)

    def test_linear_in_weights(self, fx, rng):
        a, b = next(_pairs(rng))
        w1 = LossWeights(0.3, 0.7, 0.05, 0.01)
        w2 = LossWeights(0.7, 0.3, 0.05, 0.04)
        wsum = LossWeights(1.0, 1.0, 0.1, 0.05)
        assert abs(combined_loss(a, b, fx, wsum)
                   - combined_loss(a, b, fx, w1)
                   - combined_loss(a, b, fx, w2)) < 1e-9

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0, 0, 0)


def test_all_losses_nonnegative(fx, rng):
    for a, b in _pairs(rng, n=5):
        assert l1_loss(a, b) >= 0
        assert l2_loss(a, b) >= 0
        assert cosine_loss(a, b) >= -1e-9
        assert fr_loss(a, b, fx) >= 0
        assert combined_loss(a, b, fx) >= 0
