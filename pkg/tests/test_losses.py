import math

import numpy as np
import pytest
from conftest import central_difference

from hgfusion.losses import bce_loss, get_loss, l1_loss, mse_loss, nps, regression_loss


def _softmax_pair(p0):
    return np.stack([p0, 1 - p0], axis=-1)


class TestBCE:
    def test_perfect_prediction(self, rng):
        t = (rng.random((8, 8)) > 0.5).astype(float)
        assert bce_loss(_softmax_pair(t), t).value <= 1e-6

    def test_uniform_is_ln2(self, rng):
        t = (rng.random((5, 7)) > 0.5).astype(float)
        assert bce_loss(_softmax_pair(np.full((5, 7), 0.5)), t).value == pytest.approx(math.log(2), abs=1e-6)

    def test_gradient(self, rng):
        z = rng.uniform(0.05, 0.95, size=(8, 8, 2))
        t = (rng.random((8, 8)) > 0.5).astype(float)
        num = central_difference(lambda zz: bce_loss(zz, t).value, z)
        np.testing.assert_allclose(bce_loss(z, t).gradient, num, rtol=1e-4, atol=1e-10)

    def test_swap_invariance(self, rng):
        p = rng.random((6, 6))
        t = (rng.random((6, 6)) > 0.5).astype(float)
        a = bce_loss(_softmax_pair(p), t).value
        b = bce_loss(_softmax_pair(1 - p), 1 - t).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_clamped_at_zero_probability(self):
        t = np.ones((2, 2))
        lv = bce_loss(_softmax_pair(np.zeros((2, 2))), t)
        assert lv.value == pytest.approx(-math.log(1e-7), rel=1e-9)
        assert np.all(np.isfinite(lv.gradient))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(np.full((4, 4, 2), 0.5), np.zeros((4, 5)))


class TestNPS:
    def test_zero_at_equality(self, rng):
        a = rng.random(20)
        np.testing.assert_array_equal(nps(a, a), 0.0)

    def test_full_swing(self):
        e6 = math.exp(6)
        assert nps(0.0, 1.0) == pytest.approx((e6 - 1) / (e6 + 1), abs=1e-6)
        assert nps(0.0, 1.0) == pytest.approx(0.995055, abs=1e-6)

    def test_point_value(self):
        assert nps(0.0, 0.1) == pytest.approx(0.291313, abs=1e-5)

    def test_symmetric(self, rng):
        a, b = rng.random((2, 50))
        np.testing.assert_array_equal(nps(a, b), nps(b, a))

    def test_matches_exponential_form(self, rng):
        d = rng.random(100)
        direct = (np.exp(6 * d) - 1) / (np.exp(6 * d) + 1)
        np.testing.assert_allclose(nps(d, 0.0), direct, atol=1e-12)

    def test_bounded_monotone_and_amplifying(self):
        d = np.linspace(0, 0.99, 1001)[1:]
        v = nps(d, 0.0)
        assert np.all(v < 1) and np.all(v >= 0)
        assert np.all(np.diff(v) > 0)
        assert np.all(v > d)

    def test_large_argument_does_not_overflow(self):
        assert nps(0.0, 1e6, alpha=100.0) == 1.0

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            nps(0.0, 1.0, alpha=0)


class TestRegressionLoss:
    def test_zero_at_truth(self, rng):
        y = rng.random((6, 6, 3))
        assert regression_loss(y, y).value == 0.0

    def test_constant_offset(self):
        y = np.zeros((4, 4, 3))
        v = regression_loss(y + 0.1, y, 6.0).value
        assert v == pytest.approx(3 * math.tanh(0.3) + 0.6, abs=1e-12)
        assert v == pytest.approx(1.473938, abs=1e-5)

    def test_gradient_with_unique_extrema(self, rng):
        y = rng.random((8, 8, 3))
        yhat = rng.random((8, 8, 3))
        num = central_difference(lambda p: regression_loss(p, y).value, yhat, h=1e-7)
        np.testing.assert_allclose(regression_loss(yhat, y).gradient, num, rtol=1e-3, atol=1e-8)

    def test_tie_routes_to_first_pixel(self):
        y = np.full((2, 2, 3), 0.2)
        yhat = np.full((2, 2, 3), 0.5)  # every pixel ties for both extrema
        g = regression_loss(yhat, y).gradient
        expect = np.full((2, 2, 3), 3 * (1 - math.tanh(0.9) ** 2) / 4)
        expect[0, 0] += 2.0  # both range terms push the first pixel down
        np.testing.assert_allclose(g, expect, atol=1e-12)

    def test_non_negative(self, rng):
        for _ in range(10):
            a, b = rng.random((2, 5, 5, 3))
            assert regression_loss(a, b).value > 0

    def test_needs_three_channels(self):
        with pytest.raises(ValueError):
            regression_loss(np.zeros((4, 4, 1)), np.zeros((4, 4, 1)))
        with pytest.raises(ValueError):
            regression_loss(np.zeros((4, 4, 3)), np.zeros((4, 3, 3)))


class TestBaselines:
    def test_identical(self, rng):
        y = rng.random((4, 4, 3))
        assert l1_loss(y, y).value == 0 and mse_loss(y, y).value == 0

    def test_constant_case(self):
        y = np.zeros((3, 3, 3))
        assert l1_loss(y + 0.5, y).value == 0.5
        assert mse_loss(y + 0.5, y).value == 0.25

    @pytest.mark.parametrize("fn", [l1_loss, mse_loss])
    def test_gradient(self, fn, rng):
        y, yhat = rng.random((2, 5, 5, 3))
        num = central_difference(lambda p: fn(p, y).value, yhat)
        np.testing.assert_allclose(fn(yhat, y).gradient, num, rtol=1e-5, atol=1e-10)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            l1_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_get_loss_names():
    y = np.zeros((2, 2, 3))
    assert get_loss("nps", 6.0)(y + 0.1, y).value == pytest.approx(1.473938, abs=1e-5)
    assert get_loss("l1")(y + 0.1, y).value == pytest.approx(0.1)
    with pytest.raises(ValueError):
        get_loss("ssim")
