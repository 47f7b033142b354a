"""Training loop tests: plain/mask/L1 paths, warmup gating, the exact
weight-recovery property, early stopping, and weight-norm reporting."""

import numpy as np
import pytest

from binmask.data import Dataset, SplitSpec, split_dataset
from binmask.errors import ConfigError, NumericalError
from binmask.mask import MaskState, quantize
from binmask.masking import MaskSpec
from binmask.nn import LayerSpec, Network
from binmask.train import (
    ClassifierSpec,
    TrainConfig,
    early_stop_select,
    train,
    train_with_l1,
    weight_norm_report,
)


def separable_toy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(np.int64)
    x[y == 1] += 0.3
    x[y == 0] -= 0.3
    return Dataset(x, y)


class TestPlainTraining:
    def test_separable_toy_converges(self):
        ds = separable_toy()
        rng = np.random.default_rng(1)
        net = ClassifierSpec(hidden=(8,)).build(2, 2, rng)
        res = train(net, ds, TrainConfig(epochs=50, batch_size=32), rng)
        assert res.metrics[-1].train_loss < 1e-2
        assert len(res.metrics) == 50

    def test_divergence_reports_epoch_and_iteration(self):
        ds = Dataset(np.full((4, 1), 20.0), np.array([0, 0, 0, 0]))
        rng = np.random.default_rng(0)
        net = Network([LayerSpec("linear", in_dim=1, out_dim=1)], rng)
        net.params[0].value[...] = 1.0  # confident wrong prediction: large gradient
        cfg = TrainConfig(epochs=3, batch_size=4, lr=1e307, lr_end=1e307, momentum=0.0, weight_decay=0.0)
        with np.errstate(over="ignore"), pytest.raises(NumericalError, match="epoch"):
            train(net, ds, cfg, rng)

    def test_dataset_dimension_checked(self):
        ds = separable_toy()
        rng = np.random.default_rng(0)
        net = ClassifierSpec(hidden=(4,)).build(5, 2, rng)
        with pytest.raises(ConfigError):
            train(net, ds, TrainConfig(epochs=1), rng)

    def test_mask_requires_spec(self):
        ds = separable_toy()
        rng = np.random.default_rng(0)
        net = ClassifierSpec(hidden=(4,)).build(2, 2, rng)
        with pytest.raises(ConfigError):
            train(net, ds, TrainConfig(epochs=1), rng, mask=MaskState(2, 0.0))


class TestMaskedTraining:
    def test_warmup_gate_epochs(self):
        ds = separable_toy(400, seed=2)
        rng = np.random.default_rng(3)
        net = ClassifierSpec(hidden=(6,)).build(2, 2, rng)
        spec = MaskSpec.all_weights(net)
        mask = MaskState(spec.k, penalty=1e-3, warmup_fraction=0.1)
        res = train(net, ds, TrainConfig(epochs=10, batch_size=64), rng, mask=mask, mask_spec=spec)
        assert res.metrics[0].sparsity == 0.0
        assert res.metrics[0].mask_lr is None
        assert res.metrics[1].mask_lr == pytest.approx(mask.eta0)
        assert res.metrics[-1].mask_lr == pytest.approx(mask.eta1)

    def test_frozen_all_ones_mask_matches_dense_bitwise(self):
        ds = separable_toy(300, seed=4)

        def run(with_mask):
            rng_init = np.random.default_rng(7)
            net = ClassifierSpec(hidden=(8,)).build(2, 2, rng_init)
            rng = np.random.default_rng(8)
            mask = spec = None
            if with_mask:
                spec = MaskSpec.all_weights(net)
                mask = MaskState(spec.k, penalty=0.0, warmup_fraction=1.0)
            res = train(
                net, ds, TrainConfig(epochs=6, batch_size=64), rng, mask=mask, mask_spec=spec
            )
            return [m.train_loss for m in res.metrics], [p.value.copy() for p in net.params]

        losses_dense, params_dense = run(False)
        losses_masked, params_masked = run(True)
        assert losses_dense == losses_masked
        for a, b in zip(params_dense, params_masked):
            np.testing.assert_array_equal(a, b)

    def test_masked_weight_decays_exactly(self):
        ds = separable_toy(256, seed=5)
        rng = np.random.default_rng(9)
        net = ClassifierSpec(hidden=(4,)).build(2, 2, rng)
        spec = MaskSpec.all_weights(net)
        mask = MaskState(spec.k, penalty=0.0, warmup_fraction=1.0)  # bits never move
        mask.b_r[0] = -0.5
        mask.b = quantize(mask.b_r)
        w0 = net.params[0].value.flat[0]
        lr, wd, epochs = 0.05, 0.01, 4
        cfg = TrainConfig(epochs=epochs, batch_size=64, lr=lr, lr_end=lr, momentum=0.0, weight_decay=wd)
        train(net, ds, cfg, rng, mask=mask, mask_spec=spec)
        steps = epochs * (256 // 64)
        expected = w0 * (1.0 - lr * wd) ** steps
        assert net.params[0].value.flat[0] == pytest.approx(expected, rel=1e-12)

    def test_runtime_step_matches_public_masking_functions(self):
        # the buffered fast path must compute exactly what apply_mask,
        # mask_grad, and weight_grad_through_mask compute
        from binmask.masking import apply_mask, mask_grad, weight_grad_through_mask
        from binmask.nn import LossKind, Mode, loss_and_grad
        from binmask.train import _MaskRuntime

        rng = np.random.default_rng(33)
        xb = rng.uniform(size=(16, 3))
        yb = rng.integers(0, 2, 16)

        def fresh():
            net = ClassifierSpec(hidden=(5,)).build(3, 2, np.random.default_rng(2))
            spec = MaskSpec.all_weights(net)
            mask = MaskState(spec.k, penalty=1e-3)
            mask.unfreeze()
            bits = (rng.random(spec.k) > 0.3).astype(np.float64)
            mask.b_r = np.where(bits > 0, 0.2, -0.2)
            mask.b = quantize(mask.b_r)
            return net, spec, mask

        rng_state = rng.bit_generator.state
        net_a, spec_a, mask_a = fresh()
        loss_a, g_a = _MaskRuntime(net_a, spec_a).step(
            mask_a, xb, yb, LossKind.SIGMOID_BCE, update_mask=True
        )
        grads_a = [p.grad.copy() for p in net_a.params]

        rng.bit_generator.state = rng_state
        net_b, spec_b, mask_b = fresh()
        mask_b.smooth_update()
        masked_x, masked_w = apply_mask(spec_b, mask_b.b, xb, net_b.params)
        originals = {}
        for idx, mw in masked_w.items():
            originals[idx] = net_b.params[idx].value
            net_b.params[idx].value = mw
        logits = net_b.forward(masked_x, Mode.TRAIN)
        loss_b, dl = loss_and_grad(logits, yb, LossKind.SIGMOID_BCE)
        dx = net_b.backward(dl)
        for idx, orig in originals.items():
            net_b.params[idx].value = orig
        g_b = mask_grad(
            spec_b, mask_b.b, xb, [p.value for p in net_b.params], dx, [p.grad for p in net_b.params]
        )
        for idx, (sl, shape) in spec_b.weight_slices().items():
            p = net_b.params[idx]
            p.grad = weight_grad_through_mask(mask_b.b[sl].reshape(shape), p.grad)

        assert loss_a == loss_b
        np.testing.assert_array_equal(g_a, g_b)
        for pa, pb in zip(grads_a, net_b.params):
            np.testing.assert_array_equal(pa, pb.grad)
        np.testing.assert_array_equal(mask_a.v_smooth, mask_b.v_smooth)

    def test_final_bits_match_quantized_latents(self):
        ds = separable_toy(300, seed=6)
        rng = np.random.default_rng(10)
        net = ClassifierSpec(hidden=(6,)).build(2, 2, rng)
        spec = MaskSpec.all_weights(net)
        mask = MaskState(spec.k, penalty=1e-2)
        res = train(net, ds, TrainConfig(epochs=12, batch_size=64), rng, mask=mask, mask_spec=spec)
        np.testing.assert_array_equal(res.mask_bits, quantize(mask.b_r))

    def test_large_penalty_prunes_noise_features(self):
        from binmask.data import synth_planted_features

        ds, _ = synth_planted_features(640, 20, 0, seed=12)  # pure noise
        rng = np.random.default_rng(13)
        net = ClassifierSpec(hidden=(8,)).build(20, 2, rng)
        spec = MaskSpec.input_features(net)
        mask = MaskState(20, penalty=1.0, alpha0=0.02)
        res = train(net, ds, TrainConfig(epochs=30, batch_size=64), rng, mask=mask, mask_spec=spec)
        assert res.metrics[-1].sparsity >= 0.95


class TestL1:
    def test_huge_penalty_collapses_weights(self):
        # subgradient descent shrinks |w| by lr*lam per step and then
        # oscillates with that amplitude, so keep lr*lam small
        ds = separable_toy(300, seed=7)
        rng = np.random.default_rng(11)
        net = ClassifierSpec(hidden=(8,)).build(2, 2, rng)
        cfg = TrainConfig(
            epochs=12, batch_size=32, lr=1e-5, lr_end=1e-5, momentum=0.0, weight_decay=0.0
        )
        trained = train_with_l1(net, ds, 1e3, cfg, rng)
        _, mean_l1, _ = weight_norm_report(trained)
        assert mean_l1 < 0.05

    def test_zero_penalty_identical_trajectory(self):
        ds = separable_toy(300, seed=8)

        def run(l1):
            rng_init = np.random.default_rng(12)
            net = ClassifierSpec(hidden=(6,)).build(2, 2, rng_init)
            rng = np.random.default_rng(13)
            cfg = TrainConfig(epochs=5, batch_size=64, l1=l1)
            return [m.train_loss for m in train(net, ds, cfg, rng).metrics]

        assert run(0.0) == run(0.0)
        a = run(0.0)
        b = run(0.0)
        assert a == b

    def test_scalar_subgradient_arithmetic(self):
        # zero data gradient for the weight: x == 0 batches
        ds = Dataset(np.zeros((64, 1)), np.zeros(64, dtype=np.int64))
        rng = np.random.default_rng(14)
        net = Network([LayerSpec("linear", in_dim=1, out_dim=1)], rng)
        net.params[0].value[...] = 0.37
        lam, lr = 0.5, 0.01
        cfg = TrainConfig(epochs=3, batch_size=64, lr=lr, lr_end=lr, momentum=0.0, weight_decay=0.0, l1=lam)
        train(net, ds, cfg, rng)
        expected = 0.37 - 3 * lr * lam
        assert net.params[0].value.flat[0] == pytest.approx(expected, rel=1e-12)


class TestEarlyStopping:
    def test_select_by_auc(self):
        nets = ["n0", "n1", "n2"]
        assert early_stop_select(nets, [0.6, 0.8, 0.7]) == (1, "n1")
        assert early_stop_select(nets, [0.5, 0.6, 0.7]) == (2, "n2")
        assert early_stop_select(nets[:2], [0.7, 0.7]) == (0, "n0")

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            early_stop_select(["a"], [0.1, 0.2])

    def test_training_restores_best_checkpoint(self):
        ds = separable_toy(500, seed=9)
        train_ds, val_ds, test_ds = split_dataset(ds, SplitSpec(0.2, 0.2, seed=1))
        rng = np.random.default_rng(15)
        net = ClassifierSpec(hidden=(8,)).build(2, 2, rng)
        cfg = TrainConfig(epochs=8, batch_size=32, early_stopping=True)
        res = train(net, train_ds, cfg, rng, val_ds=val_ds, test_ds=test_ds)
        aucs = [m.validation_auc for m in res.metrics]
        assert res.best_epoch == int(np.argmax(aucs))

    def test_early_stopping_needs_validation(self):
        ds = separable_toy()
        rng = np.random.default_rng(0)
        net = ClassifierSpec(hidden=(4,)).build(2, 2, rng)
        with pytest.raises(ConfigError):
            train(net, ds, TrainConfig(epochs=2, early_stopping=True), rng)


class TestWeightNormReport:
    def _net_with_weights(self, values):
        net = Network([LayerSpec("linear", in_dim=len(values), out_dim=1)], np.random.default_rng(0))
        net.params[0].value[...] = np.asarray(values)[:, None]
        return net

    def test_l0_threshold(self):
        net = self._net_with_weights([1e-5, 0.5])
        l0, _, _ = weight_norm_report(net)
        assert l0 == pytest.approx(0.5)

    def test_l2_formula(self):
        net = self._net_with_weights([3.0, 4.0])
        _, _, l2 = weight_norm_report(net)
        assert l2 == pytest.approx(np.sqrt(25 / 2))

    def test_all_zero(self):
        net = self._net_with_weights([0.0, 0.0])
        assert weight_norm_report(net) == (0.0, 0.0, 0.0)

    def test_mask_applied_before_measuring(self):
        net = self._net_with_weights([1.0, 1.0])
        spec = MaskSpec.all_weights(net)
        l0, l1, l2 = weight_norm_report(net, np.array([1.0, 0.0]), spec)
        assert (l0, l1) == (0.5, 0.5)
