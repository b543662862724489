import math

import numpy as np
import pytest

from mqn.metrics import percentile_align, psnr, ssim
from mqn.tensor import ShapeError

from oracles import psnr_ref, ssim_ref


class TestPsnr:
    def test_identical_infinite(self, rng):
        x = rng.random((8, 8, 3)).astype(np.float32)
        assert math.isinf(psnr(x, x))

    def test_closed_form_20db(self):
        a = np.zeros((10, 10), np.float64)
        b = np.full((10, 10), 0.1, np.float64)  # mse 0.01, peak 1
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_matches_extended_precision(self, rng):
        for _ in range(20):
            a = rng.random((6, 6, 3)).astype(np.float32)
            b = rng.random((6, 6, 3)).astype(np.float32)
            assert abs(psnr(a, b) - psnr_ref(a, b)) < 1e-6

    def test_monotone_in_noise_amplitude(self, rng):
        x = rng.random((16, 16, 3)).astype(np.float32)
        noise = rng.standard_normal(x.shape).astype(np.float32)
        values = [psnr(x, x + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((3, 2)))


class TestSsim:
    def test_identical_is_one(self, rng):
        x = rng.random((20, 20, 3)).astype(np.float32)
        assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_constant_images_reduce_to_luminance_term(self):
        a = np.full((16, 16, 1), 0.25)
        b = np.full((16, 16, 1), 0.75)
        c1 = 0.01 ** 2
        want = (2 * 0.25 * 0.75 + c1) / (0.25 ** 2 + 0.75 ** 2 + c1)
        assert abs(ssim(a, b) - want) < 1e-9

    def test_matches_window_loop_oracle(self, rng):
        a = rng.random((14, 13, 2)).astype(np.float32)
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape).astype(np.float32), 0, 1)
        assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-4

    def test_symmetry(self, rng):
        a = rng.random((16, 16, 3)).astype(np.float32)
        b = rng.random((16, 16, 3)).astype(np.float32)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_range(self, rng):
        a = rng.random((12, 12)).astype(np.float32)
        b = 1.0 - a
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0

    def test_small_image_single_window_fallback(self, rng):
        a = rng.random((5, 5, 3)).astype(np.float32)
        b = rng.random((5, 5, 3)).astype(np.float32)
        assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-9
        assert abs(ssim(a, a) - 1.0) < 1e-12


class TestPercentileAlign:
    def test_identity_when_equal(self, rng):
        x = (rng.random((16, 16, 3)) * 10).astype(np.float32)
        res = percentile_align(x, x)
        assert res.scale == pytest.approx(1.0)
        assert res.offset == pytest.approx(0.0)
        assert not res.degenerate
        assert np.allclose(res.image, x)

    def test_pure_scale(self, rng):
        gt = (rng.random((16, 16, 3)) * 4).astype(np.float32)
        pred = (2.0 * gt).astype(np.float32)
        res = percentile_align(pred, gt)
        assert res.scale == pytest.approx(0.5, rel=1e-5)
        assert res.offset == pytest.approx(0.0, abs=1e-5)

    def test_monotone_distortion_aligns_percentiles(self, rng):
        from mqn.tmo import luminance
        gt = (rng.random((32, 32, 3)) * 5 + 0.1).astype(np.float32)
        pred = (gt * 3.7 + 0.9).astype(np.float32)   # monotone linear distortion
        res = percentile_align(pred, gt)
        la = np.sort(luminance(res.image).ravel())
        lg = np.sort(luminance(gt).ravel())
        n = la.size
        for q in (0.01, 0.99):
            k = max(1, math.ceil(q * n)) - 1
            step = max(abs(res.scale) * 1e-3, 1e-4)
            assert abs(la[k] - lg[k]) <= step

    def test_degenerate_flagged(self):
        pred = np.full((8, 8, 3), 2.0, np.float32)
        gt = np.zeros((8, 8, 3), np.float32)
        res = percentile_align(pred, gt)
        assert res.degenerate
        assert res.scale == 1.0 and res.offset == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            percentile_align(np.zeros((0, 3)), np.zeros((0, 3)))
