import math

import numpy as np
import pytest

from odtte.autograd import Parameter, Tensor, backward, finite_diff_check, total
from odtte.errors import ContractError, ShapeError
from odtte.layers import (
    Conv1dParams,
    DenseParams,
    channel_scale,
    conv1d,
    dense,
    global_avg_pool,
    maxpool1d,
    mse_loss,
    relu,
    sigmoid,
)


def _conv(kernel, bias=0.0):
    k = np.asarray(kernel, dtype=float).reshape(-1, 1, 1)
    return Conv1dParams(Parameter(k, name="w"), Parameter(np.array([bias]), name="b"))


def _seq(values):
    return Tensor(np.asarray(values, dtype=float).reshape(1, -1, 1))


class TestConv1d:
    def test_identity_kernel(self):
        out = conv1d(_seq([1, 2, 3, 4]), _conv([0, 1, 0]))
        np.testing.assert_array_equal(out.value.reshape(-1), [1, 2, 3, 4])

    def test_difference_kernel_is_cross_correlation(self):
        out = conv1d(_seq([1, 2, 3, 4]), _conv([1, 0, -1]))
        np.testing.assert_array_equal(out.value.reshape(-1), [-2, -2, -2, 3])

    def test_zero_input_gives_bias(self):
        out = conv1d(_seq([0, 0, 0, 0, 0]), _conv([0.3, -2, 5], bias=1.5))
        np.testing.assert_array_equal(out.value.reshape(-1), np.full(5, 1.5))

    def test_identity_kernel_is_exact_on_random_input(self, rng):
        x = rng.normal(size=(3, 12, 1))
        out = conv1d(Tensor(x), _conv([0, 1, 0]))
        np.testing.assert_array_equal(out.value, x)

    def test_channel_mismatch(self, rng):
        p = Conv1dParams.init(2, 4, rng)
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.zeros((1, 6, 3))), p)

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            Conv1dParams(Parameter(np.zeros((2, 1, 1))), Parameter(np.zeros(1)))

    def test_gradients(self, rng):
        p = Conv1dParams.init(2, 3, rng)
        err = finite_diff_check(lambda x: total(conv1d(x, p) * conv1d(x, p)), rng.normal(size=(2, 5, 2)))
        assert err < 1e-6


class TestMaxPool:
    def test_pairs(self):
        out = maxpool1d(_seq([1, 3, 2, 5]))
        np.testing.assert_array_equal(out.value.reshape(-1), [3, 5])

    def test_odd_length_drops_tail(self):
        out = maxpool1d(_seq([1, 3, 2]))
        np.testing.assert_array_equal(out.value.reshape(-1), [3])

    def test_twelve_reaches_one_after_three_pools(self):
        x = _seq(np.arange(12.0))
        lengths = []
        for _ in range(3):
            x = maxpool1d(x)
            lengths.append(x.shape[1])
        assert lengths == [6, 3, 1]

    def test_length_one_rejected(self):
        with pytest.raises(ShapeError):
            maxpool1d(_seq([1.0]))

    def test_gradient_routes_to_one_position_per_window(self, rng):
        x = Parameter(rng.normal(size=(2, 7, 3)), name="x")
        grads = backward(total(maxpool1d(x)))
        g = grads[x]
        windows = g[:, :6, :].reshape(2, 3, 2, 3)
        np.testing.assert_array_equal(windows.sum(axis=2), np.ones((2, 3, 3)))
        np.testing.assert_array_equal(g[:, 6, :], 0.0)

    def test_ties_route_to_earlier_index(self):
        x = Parameter(np.array([2.0, 2.0]).reshape(1, 2, 1), name="x")
        grads = backward(total(maxpool1d(x)))
        np.testing.assert_array_equal(grads[x].reshape(-1), [1.0, 0.0])


class TestDense:
    def test_identity_weights(self):
        p = DenseParams(Parameter(np.eye(3)), Parameter(np.zeros(3)))
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(dense(Tensor(x), p).value, x)

    def test_zero_weights_give_bias(self):
        p = DenseParams(Parameter(np.zeros((2, 2))), Parameter(np.array([0.5, -0.5])))
        np.testing.assert_array_equal(dense(Tensor([[9.0, 4.0]]), p).value, [[0.5, -0.5]])

    def test_hand_product(self):
        p = DenseParams(Parameter(np.array([[1.0, 2.0], [3.0, 4.0]])), Parameter(np.array([0.5, -0.5])))
        np.testing.assert_allclose(dense(Tensor([[1.0, 2.0]]), p).value, [[7.5, 9.5]])

    def test_shape_mismatch(self):
        p = DenseParams(Parameter(np.zeros((3, 2))))
        with pytest.raises(ShapeError):
            dense(Tensor(np.zeros((1, 2))), p)

    def test_parameter_count_of_12_to_50(self, rng):
        p = DenseParams.init(12, 50, rng)
        assert sum(q.size for q in p.parameters()) == 650


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).value, [0, 0, 2])

    def test_relu_subgradient_at_zero(self):
        x = Parameter(np.array([-1.0, 0.0, 2.0]), name="x")
        np.testing.assert_array_equal(backward(total(relu(x)))[x], [0, 0, 1])

    def test_sigmoid_values(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5
        assert sigmoid(Tensor(math.log(3.0))).item() == pytest.approx(0.75, abs=1e-15)


class TestSqueezePieces:
    def test_global_avg_pool(self):
        x = Tensor(np.array([[1, 2], [1, 2], [1, 2], [1, 2]], dtype=float).reshape(1, 4, 2))
        np.testing.assert_array_equal(global_avg_pool(x).value, [[1.0, 2.0]])
        y = Tensor(np.array([1.0, 2.0, 3.0, 6.0]).reshape(1, 4, 1))
        assert global_avg_pool(y).value[0, 0] == 3.0

    def test_channel_scale(self, rng):
        x = rng.normal(size=(2, 5, 3))
        np.testing.assert_array_equal(channel_scale(Tensor(x), Tensor(np.ones((2, 3)))).value, x)
        np.testing.assert_array_equal(channel_scale(Tensor(x), Tensor(np.zeros((2, 3)))).value, 0.0)
        half = channel_scale(Tensor(np.array([2.0, 4.0]).reshape(1, 2, 1)), Tensor([[0.5]]))
        np.testing.assert_array_equal(half.value.reshape(-1), [1.0, 2.0])

    def test_channel_scale_shape_mismatch(self):
        with pytest.raises(ShapeError):
            channel_scale(Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((1, 3))))

    def test_pool_and_scale_gradients(self, rng):
        e = Tensor(rng.uniform(0.2, 0.9, size=(2, 3)))
        err = finite_diff_check(lambda x: total(channel_scale(x, e) * global_avg_pool(x).reshape((2, 1, 3))),
                                rng.normal(size=(2, 4, 3)))
        assert err < 1e-6


class TestMSE:
    def test_perfect_prediction(self):
        assert mse_loss(Tensor([[1.0], [2.0]]), np.array([1.0, 2.0])).item() == 0.0

    def test_single_sample(self):
        assert mse_loss(Tensor([[2.0]]), np.array([0.0])).item() == 4.0

    def test_hand_value(self):
        loss = mse_loss(Tensor([[2.0], [2.0], [2.0]]), np.array([1.0, 2.0, 4.0]))
        assert loss.item() == pytest.approx(5.0 / 3.0)

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            mse_loss(Tensor(np.zeros((0, 1))), np.zeros(0))
