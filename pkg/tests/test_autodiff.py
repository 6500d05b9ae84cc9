"""Reverse-mode correctness: per-op gradients and tape mechanics."""

import numpy as np
import pytest

from cunet.tensor import (Tensor, add, backward, batch_norm, concat_channels,
                          conv2d, max_pool2, mse_loss, relu, scale,
                          tensor_sum, upsample_nearest2)


def _param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f at x, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        hi = f()
        flat_x[i] = orig - eps
        lo = f()
        flat_x[i] = orig
        flat_g[i] = (hi - lo) / (2 * eps)
    return g


def _check_op_grads(make_loss, *params, rtol=1e-6, atol=1e-8):
    loss = make_loss()
    backward(loss)
    for p in params:
        assert p.grad is not None, "parameter missed by backward"
        num = _fd_grad(lambda: float(make_loss().data), p.data)
        np.testing.assert_allclose(p.grad, num, rtol=rtol, atol=atol)


class TestOpGradients:
    def test_conv2d_general(self, rng):
        x = _param(rng.standard_normal((2, 3, 6, 6)))
        w = _param(rng.standard_normal((4, 3, 3, 3)) * 0.5)
        b = _param(rng.standard_normal(4))
        _check_op_grads(lambda: tensor_sum(
            scale(conv2d(x, w, b, stride=1, pad=1), 0.1)), x, w, b)

    def test_conv2d_strided(self, rng):
        x = _param(rng.standard_normal((1, 2, 7, 7)))
        w = _param(rng.standard_normal((3, 2, 3, 3)) * 0.5)
        b = _param(rng.standard_normal(3))
        _check_op_grads(lambda: tensor_sum(
            scale(conv2d(x, w, b, stride=2, pad=0), 0.1)), x, w, b)

    def test_conv2d_1x1_fast_path(self, rng):
        x = _param(rng.standard_normal((2, 4, 5, 5)))
        w = _param(rng.standard_normal((3, 4, 1, 1)))
        b = _param(rng.standard_normal(3))
        _check_op_grads(lambda: tensor_sum(
            scale(conv2d(x, w, b), 0.1)), x, w, b)

    def test_batch_norm_train_differentiates_stats(self, rng):
        x = _param(rng.standard_normal((3, 2, 4, 4)))
        gamma = _param(rng.standard_normal(2) + 2.0)
        beta = _param(rng.standard_normal(2))

        def make():
            rm, rv = np.zeros(2), np.ones(2)  # fresh buffers: pure function
            y = batch_norm(x, gamma, beta, rm, rv, train=True)
            return tensor_sum(scale(relu(y), 0.25))

        _check_op_grads(make, x, gamma, beta, rtol=1e-5, atol=1e-7)

    def test_batch_norm_eval_constant_stats(self, rng):
        x = _param(rng.standard_normal((2, 2, 3, 3)))
        gamma = _param(np.array([1.5, 0.5]))
        beta = _param(np.array([0.1, -0.2]))
        rm = np.array([0.3, -0.4])
        rv = np.array([1.2, 0.8])

        def make():
            return tensor_sum(scale(batch_norm(x, gamma, beta, rm.copy(),
                                               rv.copy(), train=False), 0.5))

        _check_op_grads(make, x, gamma, beta)

    def test_pool_routes_to_argmax(self):
        x = _param(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        backward(tensor_sum(max_pool2(x)))
        np.testing.assert_array_equal(x.grad, [[[[0, 0], [0, 1.0]]]])

    def test_pool_tie_breaks_first_row_major(self):
        x = _param(np.full((1, 1, 2, 2), 7.0))
        backward(tensor_sum(max_pool2(x)))
        np.testing.assert_array_equal(x.grad, [[[[1.0, 0], [0, 0]]]])

    def test_upsample_sums_quad(self, rng):
        x = _param(rng.standard_normal((1, 2, 3, 3)))
        backward(tensor_sum(upsample_nearest2(x)))
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 3, 3), 4.0))

    def test_concat_splits_gradient(self, rng):
        a = _param(rng.standard_normal((1, 2, 2, 2)))
        b = _param(rng.standard_normal((1, 3, 2, 2)))
        out = concat_channels([a, b])
        backward(mse_loss(out, Tensor(np.zeros(out.shape))))
        _check = 2.0 / out.data.size
        np.testing.assert_allclose(a.grad, _check * a.data, rtol=1e-12)
        np.testing.assert_allclose(b.grad, _check * b.data, rtol=1e-12)

    def test_relu_zero_below(self, rng):
        x = _param(np.array([-1.0, 0.0, 2.0]))
        backward(tensor_sum(relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_mse_gradient(self, rng):
        p = _param(rng.standard_normal((2, 1, 3, 3)))
        t = Tensor(rng.standard_normal((2, 1, 3, 3)))
        backward(mse_loss(p, t))
        np.testing.assert_allclose(p.grad, 2 * (p.data - t.data) / p.data.size,
                                   rtol=1e-12)


class TestTapeMechanics:
    def test_diamond_visits_each_node_once(self, rng):
        # a feeds both concat inputs; the add below makes a second diamond.
        a = _param(rng.standard_normal((1, 2, 2, 2)))
        both = concat_channels([a, a])
        twice = add(both, both)
        backward(tensor_sum(twice))
        # d/da sum(2*[a; a]) = 2 + 2 per entry of a
        np.testing.assert_array_equal(a.grad, np.full(a.shape, 4.0))

    def test_gradient_accumulates_across_uses(self, rng):
        x = _param(rng.standard_normal((1, 1, 2, 2)))
        y = add(x, x)
        backward(tensor_sum(y))
        np.testing.assert_array_equal(x.grad, np.full(x.shape, 2.0))

    def test_no_grad_for_untracked(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 2, 2)))  # requires_grad False
        w = _param(rng.standard_normal((1, 1, 1, 1)))
        b = _param(np.zeros(1))
        backward(tensor_sum(conv2d(x, w, b)))
        assert x.grad is None
        assert w.grad is not None

    def test_constant_graph_has_no_tape(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        out = relu(x)
        assert out.node is None
        with pytest.raises(ValueError, match="tape|graph|grad"):
            backward(tensor_sum(out))

    def test_backward_requires_scalar(self, rng):
        x = _param(rng.standard_normal((1, 1, 2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            backward(relu(x))

    def test_repeated_backward_accumulates(self, rng):
        x = _param(rng.standard_normal((1, 1, 2, 2)))
        loss = tensor_sum(scale(x, 3.0))
        backward(loss)
        first = x.grad.copy()
        backward(loss)
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_zero_grad_clears(self, rng):
        x = _param(rng.standard_normal((1, 1, 2, 2)))
        backward(tensor_sum(x))
        x.zero_grad()
        assert x.grad is None

    def test_detach_cuts_the_graph(self, rng):
        x = _param(rng.standard_normal((1, 1, 2, 2)))
        y = scale(x, 2.0).detach()
        assert y.node is None and not y.requires_grad

    def test_grad_dtype_matches_param(self):
        x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        backward(tensor_sum(x))
        assert x.grad.dtype == np.float32
