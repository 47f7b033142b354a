"""Network engine tests: forward arithmetic, exact backprop, loss gradients,
and agreement with the central finite-difference oracle."""

import math

import numpy as np
import pytest

from binmask.errors import ConfigError, NumericalError, StateError
from binmask.nn import (
    LayerSpec,
    LossKind,
    Mode,
    Network,
    accuracy,
    build_mlp,
    finite_diff_grad,
    loss_and_grad,
    predict_scores,
)


def rng_for(seed):
    return np.random.default_rng(seed)


def make_net(specs, seed=0):
    return Network(specs, rng_for(seed))


class TestForward:
    def test_identity_linear(self):
        net = make_net([LayerSpec("linear", in_dim=2, out_dim=2)])
        net.params[0].value[...] = np.eye(2)
        net.params[1].value[...] = 0.0
        out = net.forward(np.array([[3.0, 4.0]]))
        np.testing.assert_array_equal(out, [[3.0, 4.0]])

    def test_tanh_at_zero(self):
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1), LayerSpec("tanh")])
        net.params[0].value[...] = 1.0
        net.params[1].value[...] = 0.0
        out = net.forward(np.array([[0.0]]))
        np.testing.assert_array_equal(out, [[0.0]])

    def test_forced_arithmetic(self):
        net = make_net([LayerSpec("linear", in_dim=2, out_dim=1)])
        net.params[0].value[...] = np.array([[1.0], [1.0]])
        net.params[1].value[...] = 0.0
        out = net.forward(np.array([[0.5, 0.25]]))
        np.testing.assert_allclose(out, [[0.75]])

    def test_dimension_mismatch(self):
        net = make_net(build_mlp(3, (4,), 2))
        with pytest.raises(ConfigError):
            net.forward(np.zeros((2, 5)))

    def test_nonfinite_activation_names_layer(self):
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1)])
        net.params[0].value[...] = 1e308
        with np.errstate(over="ignore"), pytest.raises(NumericalError, match="layer 0"):
            net.forward(np.array([[1e308]]))

    def test_eval_forward_is_pure(self):
        net = make_net(build_mlp(4, (8, 5), 3, batchnorm=True, dropout=0.3), seed=5)
        x = rng_for(1).standard_normal((6, 4))
        a = net.forward(x, Mode.EVAL)
        b = net.forward(x, Mode.EVAL)
        assert np.array_equal(a, b)


class TestLosses:
    def test_bce_at_zero_logit(self):
        loss, dz = loss_and_grad(np.array([[0.0]]), np.array([1]), LossKind.SIGMOID_BCE)
        assert loss == pytest.approx(math.log(2.0))
        np.testing.assert_allclose(dz, [[-0.5]])

    def test_uniform_softmax(self):
        loss, dz = loss_and_grad(np.array([[0.0, 0.0]]), np.array([0]), LossKind.SOFTMAX_CE)
        assert loss == pytest.approx(math.log(2.0))
        np.testing.assert_allclose(dz, [[-0.5, 0.5]])

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            loss_and_grad(np.zeros((2, 3)), np.array([0, 3]), LossKind.SOFTMAX_CE)

    def test_softmax_gradient_matches_finite_differences(self):
        # independent oracle: central differences on the loss itself
        rng = rng_for(7)
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, 4)
        _, dl = loss_and_grad(logits, labels, LossKind.SOFTMAX_CE)
        h = 1e-5
        for i in range(4):
            for j in range(3):
                up = logits.copy()
                up[i, j] += h
                down = logits.copy()
                down[i, j] -= h
                num = (
                    loss_and_grad(up, labels, LossKind.SOFTMAX_CE)[0]
                    - loss_and_grad(down, labels, LossKind.SOFTMAX_CE)[0]
                ) / (2 * h)
                assert dl[i, j] == pytest.approx(num, rel=1e-4)

    def test_bce_gradient_matches_finite_differences(self):
        rng = rng_for(8)
        logits = rng.standard_normal(5)
        labels = rng.integers(0, 2, 5)
        _, dl = loss_and_grad(logits, labels, LossKind.SIGMOID_BCE)
        h = 1e-5
        for i in range(5):
            up = logits.copy()
            up[i] += h
            down = logits.copy()
            down[i] -= h
            num = (
                loss_and_grad(up, labels, LossKind.SIGMOID_BCE)[0]
                - loss_and_grad(down, labels, LossKind.SIGMOID_BCE)[0]
            ) / (2 * h)
            assert dl[i] == pytest.approx(num, rel=1e-4)

    def test_scores_and_accuracy(self):
        logits = np.array([[2.0], [-1.0]])
        scores = predict_scores(logits, LossKind.SIGMOID_BCE)
        assert scores[0] > 0.5 > scores[1]
        assert accuracy(logits, np.array([1, 0]), LossKind.SIGMOID_BCE) == 1.0
        multi = np.array([[0.1, 2.0, -1.0]])
        assert accuracy(multi, np.array([1]), LossKind.SOFTMAX_CE) == 1.0


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = make_net(build_mlp(3, (4,), 2), seed=2)
        x = rng_for(0).standard_normal((5, 3))
        net.forward(x, Mode.TRAIN)
        net.backward(np.zeros((5, 2)))
        for p in net.params:
            np.testing.assert_array_equal(p.grad, np.zeros_like(p.grad))

    def test_chain_rule_by_hand(self):
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1)])
        net.params[0].value[...] = 2.0
        net.params[1].value[...] = 0.0
        net.forward(np.array([[3.0]]), Mode.TRAIN)
        dinput = net.backward(np.array([[1.0]]))
        np.testing.assert_allclose(net.params[0].grad, [[3.0]])
        np.testing.assert_allclose(dinput, [[2.0]])

    def test_backward_without_forward_raises(self):
        net = make_net(build_mlp(2, (3,), 2))
        with pytest.raises(StateError):
            net.backward(np.zeros((1, 2)))
        net.forward(np.zeros((1, 2)), Mode.EVAL)
        with pytest.raises(StateError):
            net.backward(np.zeros((1, 2)))

    @pytest.mark.parametrize("seed", range(6))
    def test_random_mlp_matches_finite_differences(self, seed):
        rng = rng_for(100 + seed)
        widths = [int(rng.integers(2, 8)) for _ in range(2)]
        activation = "tanh" if seed % 2 else "relu"
        specs = build_mlp(
            4, widths, 3,
            activation=activation,
            batchnorm=seed % 3 == 0,
            dropout=0.25 if seed % 3 == 1 else 0.0,
        )
        net = Network(specs, rng)
        for p in net.params:
            if p.kind == "bias":
                p.value[...] = rng.normal(scale=0.1, size=p.value.shape)
        x = rng.standard_normal((6, 4))
        labels = rng.integers(0, 3, 6)
        logits = net.forward(x, Mode.TRAIN)
        _, dl = loss_and_grad(logits, labels, LossKind.SOFTMAX_CE)
        net.backward(dl)
        analytic = [p.grad.copy() for p in net.params]
        numeric = finite_diff_grad(net, x, labels, LossKind.SOFTMAX_CE, step=1e-5)
        for a, f in zip(analytic, numeric):
            np.testing.assert_allclose(a, f, rtol=1e-4, atol=1e-8)


class TestFiniteDiffOracle:
    def test_quadratic_toy_matches_analytic(self):
        # single linear unit, squared input, BCE at a known point: check the
        # oracle itself against the closed-form derivative of the loss.
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1)])
        net.params[0].value[...] = 0.7
        net.params[1].value[...] = 0.1
        x = np.array([[2.0]])
        labels = np.array([1])
        grads = finite_diff_grad(net, x, labels, LossKind.SIGMOID_BCE, step=1e-5)
        z = 0.7 * 2.0 + 0.1
        sig = 1.0 / (1.0 + math.exp(-z))
        # dL/dw = (sigma(z) - y) * x, dL/db = (sigma(z) - y)
        assert grads[0][0, 0] == pytest.approx((sig - 1.0) * 2.0, abs=1e-6)
        assert grads[1][0] == pytest.approx(sig - 1.0, abs=1e-6)

    def test_zero_loss_configuration(self):
        # saturated correct prediction: gradient numerically zero
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1)])
        net.params[0].value[...] = 40.0
        net.params[1].value[...] = 0.0
        grads = finite_diff_grad(net, np.array([[1.0]]), np.array([1]), LossKind.SIGMOID_BCE)
        assert abs(grads[0][0, 0]) < 1e-8

    def test_step_must_be_positive(self):
        net = make_net([LayerSpec("linear", in_dim=1, out_dim=1)])
        with pytest.raises(ValueError):
            finite_diff_grad(net, np.zeros((1, 1)), np.array([0]), LossKind.SIGMOID_BCE, step=0.0)


class TestDropout:
    def test_zeroed_fraction_and_scaling(self):
        p = 0.3
        net = make_net(
            [LayerSpec("linear", in_dim=1, out_dim=100), LayerSpec("dropout", p=p)], seed=9
        )
        net.params[0].value[...] = 1.0
        net.params[1].value[...] = 1.0  # all pre-dropout activations equal 2
        x = np.full((100, 1), 1.0)
        out = net.forward(x, Mode.TRAIN)
        zeroed = float(np.mean(out == 0.0))
        sigma = math.sqrt(p * (1 - p) / out.size)
        assert abs(zeroed - p) < 3 * sigma
        survivors = out[out != 0.0]
        np.testing.assert_allclose(survivors, 2.0 / (1 - p))

    def test_eval_mode_is_identity(self):
        net = make_net([LayerSpec("linear", in_dim=2, out_dim=2), LayerSpec("dropout", p=0.5)])
        net.params[0].value[...] = np.eye(2)
        x = rng_for(3).standard_normal((4, 2))
        np.testing.assert_array_equal(net.forward(x, Mode.EVAL), x)

    def test_invalid_probability(self):
        with pytest.raises(ConfigError):
            make_net([LayerSpec("linear", in_dim=1, out_dim=1), LayerSpec("dropout", p=1.0)])


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        net = make_net(
            [LayerSpec("linear", in_dim=3, out_dim=3), LayerSpec("batchnorm", dim=3)], seed=4
        )
        net.params[0].value[...] = np.eye(3)
        x = rng_for(11).standard_normal((200, 3)) * 5.0 + 2.0
        out = net.forward(x, Mode.TRAIN)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)

    def test_replay_does_not_touch_running_stats(self):
        net = make_net(
            [LayerSpec("linear", in_dim=2, out_dim=2), LayerSpec("batchnorm", dim=2)], seed=4
        )
        bn = net.layers[1]
        x = rng_for(12).standard_normal((16, 2))
        net.forward(x, Mode.TRAIN)
        mean_after = bn.running_mean.copy()
        net.forward(x, Mode.REPLAY)
        np.testing.assert_array_equal(bn.running_mean, mean_after)
