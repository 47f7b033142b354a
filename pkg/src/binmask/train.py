"""Training loop: masked or plain minibatch training with per-epoch metrics.

One loop covers everything: plain SGD/AdamW training, L1-penalized
training, and mask training where binary masks multiply bound weights or
input features each iteration. Mask latent weights update after the weight
step using the gradients of the same backward pass. A fixed seed gives a
bit-identical run; all sampling goes through the generator passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .mask import MaskState, warmup_epochs
from .masking import MaskSpec
from .nn import LossKind, Mode, Network, accuracy, build_mlp, loss_and_grad, predict_scores
from .optim import SGD, AdamW, CosineSchedule, cosine_lr
from .report import auc
from .data import Dataset


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 256
    lr: float = 0.1
    lr_end: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    optimizer: str = "sgd"  # "sgd" or "adamw"
    l1: float = 0.0
    early_stopping: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.l1 < 0:
            raise ConfigError("l1 coefficient must be >= 0")


@dataclass(frozen=True)
class ClassifierSpec:
    """Architecture template; binary tasks get a single sigmoid output unit."""

    hidden: tuple[int, ...] = (64, 20)
    activation: str = "tanh"
    batchnorm: bool = False
    dropout: float = 0.0

    def build(self, in_dim: int, n_classes: int, rng) -> Network:
        out_dim = 1 if n_classes == 2 else n_classes
        specs = build_mlp(
            in_dim, self.hidden, out_dim,
            activation=self.activation, batchnorm=self.batchnorm, dropout=self.dropout,
        )
        return Network(specs, rng)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_loss: float | None = None
    test_accuracy: float | None = None
    validation_auc: float | None = None
    sparsity: float | None = None
    mask_lr: float | None = None


@dataclass
class TrainResult:
    network: Network
    mask: MaskState | None
    mask_bits: np.ndarray | None
    metrics: list[EpochMetrics]
    best_epoch: int | None = None


def loss_kind_for(net: Network) -> LossKind:
    return LossKind.SIGMOID_BCE if net.output_dim == 1 else LossKind.SOFTMAX_CE


def evaluate(net: Network, ds: Dataset, loss_kind: LossKind) -> tuple[float, float]:
    logits = net.forward(ds.features, Mode.EVAL)
    loss, _ = loss_and_grad(logits, ds.labels, loss_kind)
    return loss, accuracy(logits, ds.labels, loss_kind)


def _add_l1_subgradient(net: Network, lam: float):
    # subgradient at exactly zero is zero (np.sign(0) == 0)
    for p in net.params:
        if p.kind == "weight":
            p.grad += lam * np.sign(p.value)


class _MaskRuntime:
    """Preallocated buffers for the per-iteration masked forward/backward.

    Computes exactly what :func:`binmask.masking.apply_mask`,
    :func:`binmask.masking.mask_grad`, and
    :func:`binmask.masking.weight_grad_through_mask` compute, but in place:
    the mask step runs every minibatch, so temporaries would dominate the
    masking overhead on small networks.
    """

    def __init__(self, net: Network, spec: MaskSpec):
        self.net = net
        self.spec = spec
        self.weight_items = []
        for idx, (sl, shape) in spec.weight_slices().items():
            param = net.params[idx]
            self.weight_items.append((param, sl, shape, np.empty(shape), np.empty(shape)))
        self.input_items = spec.input_slices()
        self.g_b = np.empty(spec.k)

    def step(self, mask: MaskState, xb, yb, loss_kind, update_mask: bool):
        """One masked iteration; returns (loss, mask task gradient or None)."""
        net = self.net
        b = mask.b
        mask.smooth_update()
        if self.input_items:
            masked_x = np.array(xb)
            for sl, cols in self.input_items:
                masked_x[:, list(cols)] *= b[sl]
        else:
            masked_x = xb
        originals = []
        for param, sl, shape, masked_buf, _ in self.weight_items:
            np.multiply(param.value, b[sl].reshape(shape), out=masked_buf)
            originals.append(param.value)
            param.value = masked_buf
        try:
            logits = net.forward(masked_x, Mode.TRAIN)
            loss, dlogits = loss_and_grad(logits, yb, loss_kind)
            dx = net.backward(dlogits)
        finally:
            for (param, _, _, _, _), orig in zip(self.weight_items, originals):
                param.value = orig
        for param, sl, shape, _, prod_buf in self.weight_items:
            if update_mask:
                # W * dW' routed back to the mask entry (original weights)
                np.multiply(param.value, param.grad, out=prod_buf)
                self.g_b[sl] = prod_buf.ravel()
            param.grad *= b[sl].reshape(shape)  # masked-out weights: zero task grad
        if update_mask:
            for sl, cols in self.input_items:
                self.g_b[sl] = (xb[:, list(cols)] * dx[:, list(cols)]).sum(axis=0)
        return loss, (self.g_b if update_mask else None)


def train(
    net: Network,
    train_ds: Dataset,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    mask: MaskState | None = None,
    mask_spec: MaskSpec | None = None,
    test_ds: Dataset | None = None,
    val_ds: Dataset | None = None,
) -> TrainResult:
    """Run the full training loop and return the trained network and metrics.

    With a mask: bits stay frozen all-ones for the warmup epochs, then the
    mask learning rate anneals on its own cosine schedule while the latent
    weights update once per iteration from the shared backward pass.
    """
    if train_ds.n < 1:
        raise ConfigError("empty training set")
    if train_ds.d != net.input_dim:
        raise ConfigError(f"dataset has {train_ds.d} features, network expects {net.input_dim}")
    if (mask is None) != (mask_spec is None):
        raise ConfigError("mask and mask_spec must be given together")
    if mask is not None and mask.size != mask_spec.k:
        raise ConfigError(f"mask size {mask.size} != spec entry count {mask_spec.k}")
    loss_kind = loss_kind_for(net)
    if config.early_stopping:
        if val_ds is None:
            raise ConfigError("early stopping needs a validation set")
        if loss_kind is not LossKind.SIGMOID_BCE:
            raise ConfigError("early stopping selects on AUC and needs a binary task")

    n = train_ds.n
    bs = min(config.batch_size, n)
    iters = n // bs
    weight_sched = CosineSchedule(config.lr, config.lr_end, config.epochs)
    if config.optimizer == "sgd":
        opt = SGD(net.params, config.lr, config.momentum, config.weight_decay)
    else:
        opt = AdamW(net.params, config.lr, config.weight_decay)

    warmup = 0
    mask_sched = None
    runtime = None
    if mask is not None:
        warmup = warmup_epochs(config.epochs, mask.warmup_fraction)
        if warmup < config.epochs:
            mask_sched = CosineSchedule(mask.eta0, mask.eta1, config.epochs - warmup)
        runtime = _MaskRuntime(net, mask_spec)

    features = train_ds.features
    labels = train_ds.labels
    metrics: list[EpochMetrics] = []
    checkpoints = []
    val_aucs = []

    for epoch in range(config.epochs):
        opt.lr = cosine_lr(weight_sched, epoch)
        mask_lr = None
        if mask is not None and epoch >= warmup and mask_sched is not None:
            if mask.frozen:
                mask.unfreeze()
            mask_lr = cosine_lr(mask_sched, epoch - warmup)
        perm = rng.permutation(n)
        total_loss = 0.0
        for it in range(iters):
            idx = perm[it * bs:(it + 1) * bs]
            xb = features[idx]
            yb = labels[idx]
            try:
                if mask is not None:
                    loss, g_b = runtime.step(
                        mask, xb, yb, loss_kind, update_mask=mask_lr is not None
                    )
                else:
                    logits = net.forward(xb, Mode.TRAIN)
                    loss, dlogits = loss_and_grad(logits, yb, loss_kind)
                    net.backward(dlogits)
                    g_b = None
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, iteration {it}: {exc}"
                ) from exc
            if not math.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}, iteration {it}")
            if config.l1 > 0.0:
                _add_l1_subgradient(net, config.l1)
            opt.step()
            if g_b is not None:
                mask.update(g_b, mask_lr)
            total_loss += loss

        test_loss = test_acc = val_auc = None
        if test_ds is not None:
            test_loss, test_acc = evaluate(net, test_ds, loss_kind)
        if val_ds is not None and loss_kind is LossKind.SIGMOID_BCE:
            scores = predict_scores(net.forward(val_ds.features, Mode.EVAL), loss_kind)
            val_auc = auc(scores, val_ds.labels)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=total_loss / iters,
                test_loss=test_loss,
                test_accuracy=test_acc,
                validation_auc=val_auc,
                sparsity=mask.sparsity if mask is not None else None,
                mask_lr=mask_lr,
            )
        )
        if config.early_stopping:
            checkpoints.append((net.state_copy(), mask.b.copy() if mask is not None else None))
            val_aucs.append(val_auc)

    best_epoch = None
    mask_bits = mask.b.copy() if mask is not None else None
    if config.early_stopping:
        best_epoch, (state, bits) = early_stop_select(checkpoints, val_aucs)
        net.load_state(state)
        if bits is not None:
            mask_bits = bits
    return TrainResult(net, mask, mask_bits, metrics, best_epoch)


def train_with_l1(net, train_ds, lam, config, rng, **kwargs) -> Network:
    """Train with an L1 weight penalty of strength ``lam``; returns the network."""
    if lam < 0:
        raise ConfigError("l1 coefficient must be >= 0")
    return train(net, train_ds, replace(config, l1=lam), rng, **kwargs).network


def early_stop_select(checkpoints, val_aucs):
    """Checkpoint with the highest validation AUC; earliest epoch wins ties."""
    if not checkpoints or len(checkpoints) != len(val_aucs):
        raise ValueError("need equally many checkpoints and AUC values")
    best = int(np.argmax(np.asarray(val_aucs, dtype=np.float64)))
    return best, checkpoints[best]


def weight_norm_report(
    net: Network, mask_bits: np.ndarray | None = None, mask_spec: MaskSpec | None = None
) -> tuple[float, float, float]:
    """(mean L0, mean L1, mean L2) over flattened linear weights.

    Mean L0 is the fraction of weights with |w| >= 1e-4; mean Lp is
    ((1/n) sum |w|^p)^(1/p). When mask bits are given they multiply the
    bound weights before measuring.
    """
    masked: dict[int, np.ndarray] = {}
    if mask_bits is not None:
        if mask_spec is None:
            raise ConfigError("mask bits need a mask spec")
        for idx, (sl, shape) in mask_spec.weight_slices().items():
            masked[idx] = net.params[idx].value * np.asarray(mask_bits)[sl].reshape(shape)
    flat = []
    for i, p in enumerate(net.params):
        if p.kind != "weight":
            continue
        flat.append(masked.get(i, p.value).ravel())
    if not flat:
        return 0.0, 0.0, 0.0
    w = np.abs(np.concatenate(flat))
    mean_l0 = float(np.mean(w >= 1e-4))
    mean_l1 = float(np.mean(w))
    mean_l2 = float(np.sqrt(np.mean(w * w)))
    return mean_l0, mean_l1, mean_l2
