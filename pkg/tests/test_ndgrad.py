import numpy as np
import pytest

from fewshot_sei import ndgrad
from fewshot_sei.errors import (
    DisconnectedGraphWarning,
    InvalidStride,
    NonScalarLoss,
    ShapeMismatch,
)
from fewshot_sei.ndgrad import AdamState, Tensor, adam_step, zero_grads

from gradcheck import check_gradients


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        k = Tensor(np.array([[[1.0]]]))
        out = ndgrad.conv1d(x, k, stride=1)
        assert np.array_equal(out.data, [[1.0, 2.0, 3.0, 4.0]])

    def test_sum_kernel(self):
        # direct evaluation of the convolution sum with K=2
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        k = Tensor(np.array([[[1.0, 1.0]]]))
        out = ndgrad.conv1d(x, k, stride=1)
        assert np.array_equal(out.data, [[3.0, 5.0, 7.0]])

    def test_output_length(self):
        x = Tensor(np.zeros((1, 10)))
        k = Tensor(np.zeros((1, 1, 3)))
        out = ndgrad.conv1d(x, k, stride=2)
        assert out.data.shape == (1, 4)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        xb = rng.standard_normal((3, 2, 12))
        k = Tensor(rng.standard_normal((4, 2, 3)))
        batched = ndgrad.conv1d(Tensor(xb), k, stride=2)
        for i in range(3):
            single = ndgrad.conv1d(Tensor(xb[i]), k, stride=2)
            assert np.array_equal(batched.data[i], single.data)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ndgrad.conv1d(Tensor(np.zeros((2, 8))), Tensor(np.zeros((1, 3, 3))), 1)

    def test_kernel_longer_than_input(self):
        with pytest.raises(ShapeMismatch):
            ndgrad.conv1d(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 3))), 1)

    def test_invalid_stride(self):
        with pytest.raises(InvalidStride):
            ndgrad.conv1d(Tensor(np.zeros((1, 8))), Tensor(np.zeros((1, 1, 3))), 0)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        assert np.array_equal(ndgrad.linear(x, w, b).data, x.data)

    def test_zero_weights_gives_bias(self):
        x = Tensor(np.ones((3, 2)))
        w = Tensor(np.zeros((2, 4)))
        b = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
        out = ndgrad.linear(x, w, b)
        assert np.array_equal(out.data, np.tile(b.data, (3, 1)))

    def test_hand_product(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        w = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
        b = Tensor(np.array([0.0, 1.0]))
        assert np.array_equal(ndgrad.linear(x, w, b).data, [[1.0, 5.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ndgrad.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


class TestRelu:
    def test_sign_cases(self):
        out = ndgrad.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_positive_passthrough(self):
        x = np.array([0.5, 1.0, 7.0])
        assert np.array_equal(ndgrad.relu(Tensor(x)).data, x)

    def test_gradient_mask(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        ndgrad.tensor_sum(ndgrad.relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        ndgrad.tensor_sum(x * x).backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_bilinear(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        w = Tensor(np.array([4.0, 5.0, 6.0]))
        ndgrad.tensor_sum(x * w).backward()
        assert np.array_equal(x.grad, w.data)

    def test_non_scalar_loss_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(NonScalarLoss):
            (x * x).backward()

    def test_disconnected_graph_warns(self):
        x = Tensor(np.ones(3))
        with pytest.warns(DisconnectedGraphWarning):
            ndgrad.tensor_sum(x).backward()

    def test_grad_accumulates_across_calls(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        loss = lambda: ndgrad.tensor_sum(x * x)
        loss().backward()
        loss().backward()
        assert np.allclose(x.grad, 8.0)
        x.zero_grad()
        loss().backward()
        assert np.allclose(x.grad, 4.0)

    def test_conv_relu_sum_pipeline_gradcheck(self):
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((2, 10)) + 0.3, requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3)) * 0.7, requires_grad=True)

        def loss():
            return ndgrad.tensor_sum(ndgrad.relu(ndgrad.conv1d(x, k, 2)))

        assert check_gradients(loss, [x, k]) < 1e-4

    def test_linearity_of_backward(self):
        rng = np.random.default_rng(3)
        xv = rng.standard_normal(5)

        def grad_of(fn):
            x = Tensor(xv.copy(), requires_grad=True)
            fn(x).backward()
            return x.grad

        f = lambda x: ndgrad.tensor_sum(x * x)
        g = lambda x: ndgrad.tensor_sum(x * Tensor(np.arange(5.0)))
        a, b = 2.5, -1.25
        combined = grad_of(lambda x: Tensor(np.array(a)) * f(x) + Tensor(np.array(b)) * g(x))
        assert np.allclose(combined, a * grad_of(f) + b * grad_of(g), atol=1e-12)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(rng.standard_normal((2, 16)), requires_grad=True)
            k = Tensor(rng.standard_normal((3, 2, 5)), requires_grad=True)
            loss = ndgrad.tensor_mean(ndgrad.relu(ndgrad.conv1d(x, k, 2)))
            loss.backward()
            return loss.data.copy(), x.grad.copy(), k.grad.copy()

        r1, r2 = run(), run()
        for a, b in zip(r1, r2):
            assert np.array_equal(a, b)


class TestSmallOps:
    def test_avg_pool_examples(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        assert np.array_equal(ndgrad.avg_pool_to(x, 2).data, [[1.5, 3.5]])
        same = ndgrad.avg_pool_to(x, 4)
        assert np.array_equal(same.data, x.data)
        const = ndgrad.avg_pool_to(Tensor(np.full((2, 7), 3.0)), 3)
        assert np.allclose(const.data, 3.0)

    def test_avg_pool_remainder_bins(self):
        # 7 -> 3 bins: widths 2,2,3
        x = Tensor(np.arange(7.0)[None])
        out = ndgrad.avg_pool_to(x, 3)
        assert np.allclose(out.data, [[0.5, 2.5, 5.0]])

    def test_avg_pool_too_short(self):
        from fewshot_sei.errors import InvalidLength

        with pytest.raises(InvalidLength):
            ndgrad.avg_pool_to(Tensor(np.zeros((1, 3))), 4)

    def test_softmax_rows(self):
        x = Tensor(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]))
        p = ndgrad.softmax(x)
        assert np.allclose(p.data[0], 1 / 3)
        assert p.data[1].argmax() == 0
        assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-9)

    def test_safe_sqrt_zero_gradient(self):
        x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
        ndgrad.tensor_sum(ndgrad.safe_sqrt(x)).backward()
        assert np.array_equal(x.grad, [0.0, 0.25])

    def test_take_rows_accumulates(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        out = ndgrad.take_rows(x, [0, 0, 2])
        ndgrad.tensor_sum(out).backward()
        assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_concat_narrow_roundtrip(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.zeros((2, 2)), requires_grad=True)
        cat = ndgrad.concat([a, b], axis=1)
        back = ndgrad.narrow(cat, 1, 0, 3)
        ndgrad.tensor_sum(back).backward()
        assert np.array_equal(a.grad, np.ones((2, 3)))
        assert np.array_equal(b.grad, np.zeros((2, 2)))

    @pytest.mark.parametrize("op_seed", range(5))
    def test_gradcheck_elementwise_chain(self, op_seed):
        rng = np.random.default_rng(op_seed)
        x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        y = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)

        def loss():
            z = x * y + x - y
            z = ndgrad.safe_sqrt(z * z)
            z = ndgrad.log(ndgrad.clamp_min(z, 1e-12))
            return ndgrad.tensor_mean(z)

        assert check_gradients(loss, [x, y]) < 1e-4


class TestAdam:
    def test_zero_grad_no_move(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = AdamState.for_params([p])
        adam_step([p], [np.zeros(2)], state, lr=0.05)
        assert np.array_equal(p.data, [1.0, -2.0])
        assert state.step_count == 1

    def test_first_step_magnitude(self):
        p = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
        g = np.array([0.5, -2.0, 10.0])
        state = AdamState.for_params([p])
        adam_step([p], [g], state, lr=0.01)
        expected = 1.0 - 0.01 * g / (np.abs(g) + state.epsilon)
        assert np.allclose(p.data, expected, atol=1e-9)

    def test_first_moment_recurrence(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        g = np.array([3.0])
        state = AdamState.for_params([p])
        adam_step([p], [g], state, lr=0.01)
        assert np.allclose(state.first_moment[0], (1 - state.beta1) * g)

    def test_step_count_after_t_updates(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = AdamState.for_params([p])
        for _ in range(7):
            adam_step([p], [np.array([1.0])], state, lr=0.001)
        assert state.step_count == 7

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState.for_params([p])
        with pytest.raises(ShapeMismatch):
            adam_step([p], [np.zeros(4)], state, lr=0.01)


class TestTensorValidation:
    def test_non_finite_rejected(self):
        from fewshot_sei.errors import NonFiniteValue

        with pytest.raises(NonFiniteValue):
            Tensor(np.array([1.0, np.nan]))

    def test_shape_and_size(self):
        t = Tensor(np.zeros((2, 3)))
        assert t.shape == (2, 3) and t.size == 6
