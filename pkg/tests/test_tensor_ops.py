"""Forward semantics of every engine op against the loop oracles."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cunet.tensor import (Tensor, add, batch_norm, concat_channels, conv2d,
                          max_pool2, mse_loss, relu, scale, tensor_sum,
                          upsample_nearest2)
from oracles import batchnorm_oracle, conv2d_oracle, maxpool2_oracle, upsample2_oracle


def _t(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype))


class TestTensorBasics:
    def test_accepts_float32_and_float64(self):
        assert Tensor(np.zeros(3, dtype=np.float32)).dtype == np.float32
        assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64

    def test_other_dtypes_become_float64(self):
        t = Tensor(np.arange(4))
        assert t.dtype == np.float64

    def test_item_requires_scalar(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros(3)).item()
        assert Tensor(np.asarray(2.5)).item() == 2.5


class TestConv2d:
    @given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3),
           st.integers(1, 3), st.integers(1, 2), st.integers(0, 2),
           st.integers(0, 99))
    def test_matches_oracle(self, n, cin, cout, k, stride, pad, seed):
        r = np.random.default_rng(seed)
        h = int(k + stride * r.integers(0, 3))
        w = int(k + stride * r.integers(0, 3))
        x = r.standard_normal((n, cin, h, w))
        wt = r.standard_normal((cout, cin, k, k))
        b = r.standard_normal(cout)
        if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
            with pytest.raises(ValueError):
                conv2d(_t(x), _t(wt), _t(b), stride=stride, pad=pad)
            return
        got = conv2d(_t(x), _t(wt), _t(b), stride=stride, pad=pad).data
        want = conv2d_oracle(x, wt, b, stride=stride, pad=pad)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)

    def test_1x1_fast_path_matches_oracle(self, rng):
        x = rng.standard_normal((2, 5, 6, 6))
        w = rng.standard_normal((3, 5, 1, 1))
        b = rng.standard_normal(3)
        got = conv2d(_t(x), _t(w), _t(b)).data
        np.testing.assert_allclose(got, conv2d_oracle(x, w, b), rtol=1e-12)

    def test_is_cross_correlation_not_convolution(self):
        # An asymmetric kernel distinguishes the two conventions.
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 0, 0] = 1.0
        w = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
        out = conv2d(_t(x), _t(w), _t([0.0]), pad=1).data
        assert out[0, 0, 0, 0] == 4.0  # center tap
        assert out[0, 0, 1, 1] == 0.0  # w[0,0] taps the impulse

    def test_rejects_fractional_output(self):
        x = _t(np.zeros((1, 1, 5, 5)))
        w = _t(np.zeros((1, 1, 2, 2)))
        b = _t(np.zeros(1))
        with pytest.raises(ValueError, match="output extent"):
            conv2d(x, w, b, stride=2)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            conv2d(_t(np.zeros((1, 3, 4, 4))), _t(np.zeros((2, 4, 1, 1))),
                   _t(np.zeros(2)))

    def test_rejects_mixed_dtypes(self):
        x = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 1, 1), dtype=np.float64))
        with pytest.raises(ValueError, match="dtype"):
            conv2d(x, w, Tensor(np.zeros(1, dtype=np.float64)))


class TestBatchNorm:
    def test_matches_oracle_train_mode(self, rng):
        x = rng.standard_normal((4, 3, 5, 5))
        gamma = rng.standard_normal(3)
        beta = rng.standard_normal(3)
        rm, rv = np.zeros(3), np.ones(3)
        got = batch_norm(_t(x), _t(gamma), _t(beta), rm, rv, train=True).data
        np.testing.assert_allclose(got, batchnorm_oracle(x, gamma, beta), rtol=1e-9)

    def test_running_stats_update(self, rng):
        x = rng.standard_normal((4, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(_t(x), _t(np.ones(2)), _t(np.zeros(2)), rm, rv, train=True)
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))  # biased, matching the update rule
        np.testing.assert_allclose(rm, 0.1 * mean, rtol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * var, rtol=1e-12)

    def test_update_stats_false_keeps_buffers(self, rng):
        x = rng.standard_normal((2, 2, 4, 4))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(_t(x), _t(np.ones(2)), _t(np.zeros(2)), rm, rv,
                   train=True, update_stats=False)
        assert rm.sum() == 0.0 and (rv == 1.0).all()

    def test_eval_uses_running_stats(self, rng):
        x = rng.standard_normal((2, 2, 4, 4))
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 0.25])
        got = batch_norm(_t(x), _t(np.ones(2)), _t(np.zeros(2)), rm, rv,
                         train=False).data
        want = (x - rm[:, None, None]) / np.sqrt(rv[:, None, None] + 1e-5)
        np.testing.assert_allclose(got, want, rtol=1e-9)

    def test_eval_mode_is_per_sample(self, rng):
        x = rng.standard_normal((4, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        full = batch_norm(_t(x), _t(np.ones(2)), _t(np.zeros(2)), rm, rv,
                          train=False).data
        one = batch_norm(_t(x[:1]), _t(np.ones(2)), _t(np.zeros(2)), rm, rv,
                         train=False).data
        np.testing.assert_array_equal(full[:1], one)


class TestPoolingAndResize:
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
           st.integers(1, 3), st.integers(0, 99))
    def test_maxpool_matches_oracle(self, n, c, hh, hw, seed):
        x = np.random.default_rng(seed).standard_normal((n, c, 2 * hh, 2 * hw))
        np.testing.assert_array_equal(max_pool2(_t(x)).data, maxpool2_oracle(x))

    def test_maxpool_rejects_odd_extent(self):
        with pytest.raises(ValueError, match="even"):
            max_pool2(_t(np.zeros((1, 1, 3, 4))))

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4),
           st.integers(1, 4), st.integers(0, 99))
    def test_upsample_matches_oracle(self, n, c, h, w, seed):
        x = np.random.default_rng(seed).standard_normal((n, c, h, w))
        np.testing.assert_array_equal(upsample_nearest2(_t(x)).data,
                                      upsample2_oracle(x))

    def test_pool_then_upsample_shapes(self, rng):
        x = _t(rng.standard_normal((2, 3, 8, 8)))
        assert upsample_nearest2(max_pool2(x)).shape == (2, 3, 8, 8)


class TestJoinsAndLoss:
    def test_concat_channel_layout(self, rng):
        a = rng.standard_normal((2, 3, 4, 4))
        b = rng.standard_normal((2, 2, 4, 4))
        out = concat_channels([_t(a), _t(b)]).data
        np.testing.assert_array_equal(out[:, :3], a)
        np.testing.assert_array_equal(out[:, 3:], b)

    def test_concat_rejects_resolution_mismatch(self):
        with pytest.raises(ValueError):
            concat_channels([_t(np.zeros((1, 1, 4, 4))),
                             _t(np.zeros((1, 1, 8, 8)))])

    def test_add_requires_exact_shapes(self):
        with pytest.raises(ValueError):
            add(_t(np.zeros((1, 2, 4, 4))), _t(np.zeros((1, 1, 4, 4))))

    def test_relu_clamps_negatives(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(relu(_t(x)).data, [0.0, 0.0, 3.0])

    def test_scale_and_sum(self):
        x = _t(np.arange(6, dtype=np.float64).reshape(2, 3))
        assert tensor_sum(x).item() == 15.0
        np.testing.assert_array_equal(scale(x, 0.5).data, x.data * 0.5)

    def test_mse_matches_definition(self, rng):
        p = rng.standard_normal((2, 3, 4, 4))
        t = rng.standard_normal((2, 3, 4, 4))
        got = mse_loss(_t(p), _t(t)).item()
        assert got == pytest.approx(((p - t) ** 2).mean(), rel=1e-12)

    def test_mse_rejects_grad_through_target(self):
        p = _t(np.zeros((1, 1, 2, 2)))
        t = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="target"):
            mse_loss(p, t)
