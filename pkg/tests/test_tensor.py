import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grainforge import tensor
from grainforge.rng import Rng


def naive_conv(x, kernels, bias):
    """Quadruple-nested-loop convolution, the independence oracle."""
    h, w, cin = x.shape
    kh, kw, _, cout = kernels.shape
    out = np.zeros((h - kh + 1, w - kw + 1, cout))
    for y in range(out.shape[0]):
        for xx in range(out.shape[1]):
            for co in range(cout):
                acc = bias[co]
                for dy in range(kh):
                    for dx in range(kw):
                        for ci in range(cin):
                            acc += x[y + dy, xx + dx, ci] * kernels[dy, dx, ci, co]
                out[y, xx, co] = acc
    return out


def naive_pool(x):
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                out[i, j, ch] = x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, ch].max()
    return out


def naive_dense(x, weights, bias):
    n, m = weights.shape
    out = np.zeros(m)
    for j in range(m):
        acc = bias[j]
        for i in range(n):
            acc += x[i] * weights[i, j]
        out[j] = acc
    return out


class TestConv2d:
    def test_table_shape(self, rng):
        x = rng.normal(0, 1, (50, 50, 3))
        k = rng.normal(0, 1, (3, 3, 3, 32))
        out = tensor.conv2d_forward(x, k, np.zeros(32))
        assert out.shape == (48, 48, 32)

    def test_single_pixel_identity(self):
        x = np.array([[[2.5]]])
        k = np.array([[[[3.0]]]])
        b = np.array([0.75])
        out = tensor.conv2d_forward(x, k, b)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(3.0 * 2.5 + 0.75)

    def test_matches_naive_loop(self, rng):
        x = rng.normal(0, 1, (5, 5, 2))
        k = rng.normal(0, 1, (3, 3, 2, 4))
        b = rng.normal(0, 1, (4,))
        out = tensor.conv2d_forward(x, k, b)
        assert np.abs(out - naive_conv(x, k, b)).max() < 1e-12

    def test_all_small_shapes_match_naive(self, rng):
        for h in range(3, 9):
            for w in range(3, 9):
                for cin, cout in ((1, 1), (2, 3)):
                    x = rng.normal(0, 1, (h, w, cin))
                    k = rng.normal(0, 1, (3, 3, cin, cout))
                    b = rng.normal(0, 1, (cout,))
                    got = tensor.conv2d_forward(x, k, b)
                    assert np.abs(got - naive_conv(x, k, b)).max() < 1e-12

    def test_channel_mismatch_names_axes(self, rng):
        x = rng.normal(0, 1, (5, 5, 2))
        k = rng.normal(0, 1, (3, 3, 3, 4))
        with pytest.raises(tensor.ShapeError, match="channel"):
            tensor.conv2d_forward(x, k, np.zeros(4))

    def test_too_small_input_rejected(self, rng):
        x = rng.normal(0, 1, (2, 5, 3))
        k = rng.normal(0, 1, (3, 3, 3, 4))
        with pytest.raises(tensor.ShapeError, match="smaller than kernel"):
            tensor.conv2d_forward(x, k, np.zeros(4))

    def test_linearity_with_zero_bias(self, rng):
        k = rng.normal(0, 1, (3, 3, 2, 3))
        zero = np.zeros(3)
        for _ in range(20):
            x1 = rng.normal(0, 1, (6, 6, 2))
            x2 = rng.normal(0, 1, (6, 6, 2))
            a, b = rng.uniform(-3, 3, 2)
            lhs = tensor.conv2d_forward(a * x1 + b * x2, k, zero)
            rhs = a * tensor.conv2d_forward(x1, k, zero) + b * tensor.conv2d_forward(
                x2, k, zero
            )
            assert np.abs(lhs - rhs).max() < 1e-10


class TestMaxPool:
    def test_table_shape(self, rng):
        x = rng.normal(0, 1, (48, 48, 32))
        out, _ = tensor.maxpool2d_forward(x)
        assert out.shape == (24, 24, 32)

    def test_constant_input(self):
        x = np.full((6, 6, 2), 3.25)
        out, _ = tensor.maxpool2d_forward(x)
        assert np.all(out == 3.25)

    def test_matches_window_scan(self, rng):
        x = rng.normal(0, 1, (6, 6, 1))
        out, _ = tensor.maxpool2d_forward(x)
        assert np.array_equal(out, naive_pool(x))

    def test_all_small_shapes_match_scan(self, rng):
        for h in range(2, 9):
            for w in range(2, 9):
                x = rng.normal(0, 1, (h, w, 2))
                out, _ = tensor.maxpool2d_forward(x)
                assert np.array_equal(out, naive_pool(x)), (h, w)

    def test_backward_routes_to_argmax(self, rng):
        x = rng.normal(0, 1, (1, 4, 4, 1))
        pooled, argmax = tensor.maxpool2d_batch(x)
        dout = np.ones_like(pooled)
        dx = tensor.maxpool2d_backward(x.shape, argmax, dout)
        # each window contributes exactly one gradient, at its max
        assert dx.sum() == pooled.size
        assert np.all((dx > 0) == (x == np.repeat(np.repeat(pooled, 2, 1), 2, 2)))


class TestDense:
    def test_table_shape(self, rng):
        x = rng.normal(0, 1, (7744,))
        w = rng.normal(0, 1, (7744, 32))
        out = tensor.dense_forward(x, w, np.zeros(32))
        assert out.shape == (32,)

    def test_identity_weights(self, rng):
        x = rng.normal(0, 1, (5,))
        out = tensor.dense_forward(x, np.eye(5), np.zeros(5))
        assert np.array_equal(out, x)

    def test_matches_scalar_loop(self, rng):
        x = rng.normal(0, 1, (8,))
        w = rng.normal(0, 1, (8, 3))
        b = rng.normal(0, 1, (3,))
        out = tensor.dense_forward(x, w, b)
        assert np.abs(out - naive_dense(x, w, b)).max() < 1e-12

    def test_length_mismatch(self, rng):
        with pytest.raises(tensor.ShapeError, match="weight rows"):
            tensor.dense_forward(np.zeros(4), rng.normal(0, 1, (5, 2)), np.zeros(2))


class TestActivations:
    def test_relu_definition(self):
        assert np.array_equal(tensor.relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])

    def test_softmax_uniform(self):
        out = tensor.softmax(np.zeros(5))
        assert np.allclose(out, 0.2, atol=1e-15)

    def test_softmax_shift_invariance(self, rng):
        for _ in range(20):
            z = rng.normal(0, 3, (7,))
            c = float(rng.uniform(-10, 10))
            d = np.abs(tensor.softmax(z) - tensor.softmax(z + c)).max()
            assert d < 1e-12

    @given(
        st.lists(st.floats(min_value=-15, max_value=15), min_size=2, max_size=10)
    )
    @settings(max_examples=200)
    def test_softmax_is_probability_vector(self, logits):
        # logit spread capped at 30: past ~36 the largest probability rounds
        # to exactly 1.0 at float64 and strict openness cannot hold
        out = tensor.softmax(np.array(logits))
        assert np.all(out > 0) and np.all(out < 1)
        assert abs(out.sum() - 1.0) < 1e-12


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = Rng(987654321).random(10_000)
        b = Rng(987654321).random(10_000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).random(100), Rng(2).random(100))

    def test_children_are_stable_and_distinct(self):
        base = Rng(7)
        assert np.array_equal(Rng(7).child("x").random(50), base.child("x").random(50))
        assert not np.array_equal(base.child("x").random(50), base.child("y").random(50))

    def test_seed_range_checked(self):
        with pytest.raises(ValueError):
            Rng(-1)
        with pytest.raises(ValueError):
            Rng(2**64)
