"""Unit tests for the tensor primitives, checked against direct-summation
and finite-difference oracles in 64-bit mode."""

import numpy as np
import pytest

from fedfreeze import ops

from oracles import finite_difference_grad, naive_conv2d, rel_error

RTOL = 1e-4
H = 1e-3


class TestConvForward:
    def test_hand_example_2x2(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        out = ops.conv2d_forward(x, w, np.zeros(1))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 5.0

    def test_identity_1x1_kernel(self, rng):
        x = rng.standard_normal((2, 1, 5, 5))
        w = np.ones((1, 1, 1, 1))
        np.testing.assert_array_equal(ops.conv2d_forward(x, w, np.zeros(1)), x)

    def test_zero_weight_gives_bias(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        w = np.zeros((3, 2, 3, 3))
        b = np.array([1.5, -2.0, 0.25])
        out = ops.conv2d_forward(x, w, b, padding=1)
        for o in range(3):
            np.testing.assert_array_equal(out[0, o], np.full((4, 4), b[o]))

    @pytest.mark.parametrize("size,stride,padding", [(6, 1, 0), (6, 1, 1), (7, 2, 0), (7, 2, 1)])
    def test_matches_direct_summation(self, rng, size, stride, padding):
        x = rng.standard_normal((2, 3, size, size))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = ops.conv2d_forward(x, w, b, stride, padding)
        want = naive_conv2d(x, w, b, stride, padding)
        assert rel_error(got, want) < 1e-12

    def test_channel_mismatch_rejected(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((1, 3, 3, 3))
        with pytest.raises(ops.DimensionError):
            ops.conv2d_forward(x, w, np.zeros(1))

    def test_non_integral_output_rejected(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        w = rng.standard_normal((1, 1, 2, 2))
        with pytest.raises(ops.DimensionError):
            ops.conv2d_forward(x, w, np.zeros(1), stride=2)


class TestConvBackward:
    def test_zero_upstream_zero_grads(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        up = np.zeros((1, 3, 2, 2))
        gx, gw, gb = ops.conv2d_backward(x, w, up)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_identity_kernel_passes_upstream(self, rng):
        x = rng.standard_normal((2, 1, 4, 4))
        w = np.ones((1, 1, 1, 1))
        up = rng.standard_normal((2, 1, 4, 4))
        gx, _, _ = ops.conv2d_backward(x, w, up)
        np.testing.assert_array_equal(gx, up)

    def test_upstream_shape_checked(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        w = rng.standard_normal((1, 1, 3, 3))
        with pytest.raises(ops.DimensionError):
            ops.conv2d_backward(x, w, np.zeros((1, 1, 4, 4)))

    @pytest.mark.parametrize("size,stride,padding", [(4, 1, 0), (4, 1, 1), (5, 2, 1)])
    def test_matches_finite_differences(self, size, stride, padding):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, size, size))
        w = rng.standard_normal((2, 2, 3, 3)) * 0.5
        b = rng.standard_normal(2) * 0.1
        up = rng.standard_normal(ops.conv2d_forward(x, w, b, stride, padding).shape)

        def loss(xx=None, ww=None, bb=None):
            return float((ops.conv2d_forward(
                xx if xx is not None else x,
                ww if ww is not None else w,
                bb if bb is not None else b, stride, padding) * up).sum())

        gx, gw, gb = ops.conv2d_backward(x, w, up, stride, padding)
        assert rel_error(gx, finite_difference_grad(lambda v: loss(xx=v), x, H)) < RTOL
        assert rel_error(gw, finite_difference_grad(lambda v: loss(ww=v), w, H)) < RTOL
        assert rel_error(gb, finite_difference_grad(lambda v: loss(bb=v), b, H)) < RTOL

    def test_input_only_variant_agrees(self, rng):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        up = rng.standard_normal((1, 3, 4, 4))
        gx_full, _, _ = ops.conv2d_backward(x, w, up)
        gx_only = ops.conv2d_backward_input(up, w, x.shape)
        np.testing.assert_array_equal(gx_full, gx_only)


class TestBatchNorm:
    def test_hand_example_batch_stats(self):
        # per-channel values [1, 3]: mean 2, biased var 1
        x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
        y, mean, var, _ = ops.batchnorm_forward(x, np.ones(1), np.zeros(1), eps=0.0)
        assert mean[0] == 2.0 and var[0] == 1.0
        np.testing.assert_allclose(y.ravel(), [-1.0, 1.0])

    def test_fixed_stats_centered_constant(self):
        x = np.full((3, 2, 2, 2), 4.0)
        y, _, _, _ = ops.batchnorm_forward(
            x, np.array([2.0, -1.0]), np.full(2, 0.5),
            mean=np.full(2, 4.0), var=np.ones(2), eps=0.0)
        np.testing.assert_allclose(y, 0.5)

    def test_identity_stats(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        y, _, _, _ = ops.batchnorm_forward(
            x, np.ones(3), np.zeros(3), mean=np.zeros(3), var=np.ones(3), eps=0.0)
        np.testing.assert_allclose(y, x, rtol=1e-12)

    def test_channel_mismatch_rejected(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        with pytest.raises(ops.DimensionError):
            ops.batchnorm_forward(x, np.ones(2), np.zeros(2))

    def test_backward_zero_upstream(self, rng):
        x = rng.standard_normal((2, 2, 3, 3))
        _, _, _, cache = ops.batchnorm_forward(x, np.ones(2), np.zeros(2))
        gx, gg, gb = ops.batchnorm_backward(cache, np.zeros_like(x))
        assert not gx.any() and not gg.any() and not gb.any()

    def test_grad_beta_is_upstream_sum(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        up = rng.standard_normal(x.shape)
        _, _, _, cache = ops.batchnorm_forward(x, rng.standard_normal(3), np.zeros(3))
        _, _, gb = ops.batchnorm_backward(cache, up)
        np.testing.assert_allclose(gb, up.sum(axis=(0, 2, 3)), rtol=1e-10)

    @pytest.mark.parametrize("batch_mode", [True, False])
    def test_backward_matches_finite_differences(self, batch_mode):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((3, 2, 3, 3))
        gamma = rng.standard_normal(2) + 1.5
        beta = rng.standard_normal(2)
        mean = None if batch_mode else rng.standard_normal(2)
        var = None if batch_mode else rng.uniform(0.5, 2.0, 2)
        up = rng.standard_normal(x.shape)

        def loss(xx=None, gg=None, bb=None):
            y, _, _, _ = ops.batchnorm_forward(
                xx if xx is not None else x,
                gg if gg is not None else gamma,
                bb if bb is not None else beta, mean, var)
            return float((y * up).sum())

        _, _, _, cache = ops.batchnorm_forward(x, gamma, beta, mean, var)
        gx, ggam, gbet = ops.batchnorm_backward(cache, up)
        assert rel_error(gx, finite_difference_grad(lambda v: loss(xx=v), x, H)) < RTOL
        assert rel_error(ggam, finite_difference_grad(lambda v: loss(gg=v), gamma, H)) < RTOL
        assert rel_error(gbet, finite_difference_grad(lambda v: loss(bb=v), beta, H)) < RTOL

    def test_negative_fixed_variance_rejected(self, rng):
        x = rng.standard_normal((1, 1, 2, 2))
        with pytest.raises(ValueError):
            ops.batchnorm_forward(x, np.ones(1), np.zeros(1),
                                  mean=np.zeros(1), var=np.array([-0.1]))


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_backward_mask(self):
        got = ops.relu_backward(np.array([-1.0, 0.0, 2.0]), np.array([5.0, 5.0, 5.0]))
        np.testing.assert_array_equal(got, [0.0, 0.0, 5.0])

    def test_finite_differences_away_from_kink(self, rng):
        x = rng.standard_normal(40)
        x = x[np.abs(x) > 1e-2]
        up = rng.standard_normal(x.shape)
        grad = ops.relu_backward(x, up)
        fd = finite_difference_grad(lambda v: float((ops.relu(v) * up).sum()), x, H)
        assert rel_error(grad, fd) < RTOL


class TestOutputBlock:
    def test_constant_map_identity_fc(self):
        x = np.full((2, 3, 4, 4), 7.0)
        logits, _ = ops.output_block_forward(x, np.eye(3), np.zeros(3))
        np.testing.assert_allclose(logits, 7.0)

    def test_hand_matrix_example(self):
        # pooled = [1, 2], W = [[1,0],[0,3]], b = [0,1] -> [1, 7]
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = 1.0
        x[0, 1] = 2.0
        logits, pooled = ops.output_block_forward(
            x, np.array([[1.0, 0.0], [0.0, 3.0]]), np.array([0.0, 1.0]))
        np.testing.assert_allclose(pooled, [[1.0, 2.0]])
        np.testing.assert_allclose(logits, [[1.0, 7.0]])

    def test_feature_mismatch_rejected(self, rng):
        with pytest.raises(ops.DimensionError):
            ops.output_block_forward(rng.standard_normal((1, 3, 2, 2)),
                                     np.ones((4, 2)), np.zeros(4))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 3, 3))
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        up = rng.standard_normal((2, 4))

        def loss(xx=None, ww=None, bb=None):
            logits, _ = ops.output_block_forward(
                xx if xx is not None else x,
                ww if ww is not None else w,
                bb if bb is not None else b)
            return float((logits * up).sum())

        _, pooled = ops.output_block_forward(x, w, b)
        gx, gw, gb = ops.output_block_backward(up, pooled, w, x.shape)
        assert rel_error(gx, finite_difference_grad(lambda v: loss(xx=v), x, H)) < RTOL
        assert rel_error(gw, finite_difference_grad(lambda v: loss(ww=v), w, H)) < RTOL
        assert rel_error(gb, finite_difference_grad(lambda v: loss(bb=v), b, H)) < RTOL


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = ops.softmax_cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))
        assert abs(loss - np.log(4)) < 1e-12

    def test_saturated_correct_class(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 20.0
        loss, _ = ops.softmax_cross_entropy(logits, np.array([2]))
        assert loss < 1e-8

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            ops.softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        _, grad = ops.softmax_cross_entropy(logits, labels)
        fd = finite_difference_grad(
            lambda v: ops.softmax_cross_entropy(v, labels)[0], logits, H)
        assert rel_error(grad, fd) < RTOL


class TestSgd:
    def test_direct_formula(self):
        out = ops.sgd_step(np.array([1.0]), np.array([0.5]), 0.1)
        np.testing.assert_allclose(out, [0.95])

    def test_zero_lr_unchanged(self, rng):
        w = rng.standard_normal(5)
        np.testing.assert_array_equal(ops.sgd_step(w, rng.standard_normal(5), 0.0), w)

    def test_zero_grad_unchanged(self, rng):
        w = rng.standard_normal(5)
        np.testing.assert_array_equal(ops.sgd_step(w, np.zeros(5), 0.3), w)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ops.DimensionError):
            ops.sgd_step(np.zeros(3), np.zeros(4), 0.1)
