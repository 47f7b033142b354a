"""Minimal feedforward network engine with exact hand-written backprop.

Supports the small MLP architectures used throughout this package: linear
layers with tanh or ReLU activations, 1-d batch normalization, inverted
dropout, and softmax / sigmoid classification losses. Everything is double
precision so that gradients can be checked tightly against central finite
differences.

Forward modes:
    TRAIN  - dropout samples fresh masks, batch norm uses batch statistics
             and updates its running estimates; activations are cached for
             a subsequent ``backward``.
    EVAL   - deterministic: dropout is the identity, batch norm uses running
             statistics, nothing is cached or mutated.
    REPLAY - like TRAIN but dropout reuses its most recently sampled masks
             and batch norm does not touch the running estimates. This makes
             the loss a deterministic function of the parameters around the
             current point, which is what the finite-difference oracle needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, NumericalError, StateError


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"
    REPLAY = "replay"


class LossKind(Enum):
    SOFTMAX_CE = "softmax_ce"
    SIGMOID_BCE = "sigmoid_bce"


class Param:
    """A dense tensor with a gradient buffer of the same shape.

    ``kind`` tags what the tensor is ("weight", "bias", "bn_gamma",
    "bn_beta") so that masking and weight-norm reporting can pick out the
    linear weight matrices.
    """

    __slots__ = ("value", "grad", "kind")

    def __init__(self, value, kind: str = "weight"):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.kind = kind

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    kind is one of "linear", "tanh", "relu", "batchnorm", "dropout".
    in_dim/out_dim apply to linear layers; dim applies to batchnorm;
    p is the dropout probability.
    """

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    dim: int = 0
    p: float = 0.0
    momentum: float = 0.9
    eps: float = 1e-5


def _xavier_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _kaiming_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _Linear:
    def __init__(self, spec: LayerSpec, rng, init: str):
        if spec.in_dim < 1 or spec.out_dim < 1:
            raise ConfigError(f"linear layer needs positive dims, got {spec.in_dim}x{spec.out_dim}")
        if init == "relu":
            w = _kaiming_uniform(rng, spec.in_dim, spec.out_dim)
        else:
            w = _xavier_uniform(rng, spec.in_dim, spec.out_dim)
        self.W = Param(w, "weight")
        self.b = Param(np.zeros(spec.out_dim), "bias")
        self._x = None

    def forward(self, x, mode):
        if mode is not Mode.EVAL:
            self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dout):
        self.W.grad = self._x.T @ dout
        self.b.grad = dout.sum(axis=0)
        return dout @ self.W.value.T

    def params(self):
        return [self.W, self.b]


class _Tanh:
    def __init__(self):
        self._out = None

    def forward(self, x, mode):
        out = np.tanh(x)
        if mode is not Mode.EVAL:
            self._out = out
        return out

    def backward(self, dout):
        return dout * (1.0 - self._out * self._out)

    def params(self):
        return []


class _ReLU:
    def __init__(self):
        self._active = None

    def forward(self, x, mode):
        if mode is not Mode.EVAL:
            self._active = x > 0
            return np.where(self._active, x, 0.0)
        return np.maximum(x, 0.0)

    def backward(self, dout):
        return np.where(self._active, dout, 0.0)

    def params(self):
        return []


class _Dropout:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""

    def __init__(self, spec: LayerSpec, rng):
        if not 0.0 <= spec.p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {spec.p}")
        self.p = spec.p
        self._rng = rng
        self._mask = None

    def _sample(self, shape):
        keep = self._rng.random(shape) >= self.p
        self._mask = keep.astype(np.float64) / (1.0 - self.p)

    def forward(self, x, mode):
        if mode is Mode.EVAL or self.p == 0.0:
            return x
        if mode is Mode.TRAIN or self._mask is None or self._mask.shape != x.shape:
            self._sample(x.shape)
        return x * self._mask

    def backward(self, dout):
        if self.p == 0.0:
            return dout
        return dout * self._mask

    def params(self):
        return []


class _BatchNorm1d:
    def __init__(self, spec: LayerSpec):
        if spec.dim < 1:
            raise ConfigError("batchnorm layer needs a positive dim")
        self.gamma = Param(np.ones(spec.dim), "bn_gamma")
        self.beta = Param(np.zeros(spec.dim), "bn_beta")
        self.running_mean = np.zeros(spec.dim)
        self.running_var = np.ones(spec.dim)
        self.momentum = spec.momentum
        self.eps = spec.eps
        self._cache = None

    def forward(self, x, mode):
        if mode is Mode.EVAL:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            return self.gamma.value * xhat + self.beta.value
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if mode is Mode.TRAIN:
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dout):
        xhat, inv_std = self._cache
        n = dout.shape[0]
        self.beta.grad = dout.sum(axis=0)
        self.gamma.grad = (dout * xhat).sum(axis=0)
        dxhat = dout * self.gamma.value
        return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def params(self):
        return [self.gamma, self.beta]


_ACTIVATIONS = {"tanh", "relu"}


class Network:
    """An ordered stack of layers built from ``LayerSpec`` entries.

    All randomness (weight init, dropout sampling) flows through the
    generator handed to the constructor; nothing uses global numpy state.
    """

    def __init__(self, specs: list[LayerSpec], rng: np.random.Generator):
        if not specs:
            raise ConfigError("network needs at least one layer")
        self.specs = list(specs)
        self.layers = []
        for i, spec in enumerate(self.specs):
            if spec.kind == "linear":
                self.layers.append(_Linear(spec, rng, self._init_for(i)))
            elif spec.kind == "tanh":
                self.layers.append(_Tanh())
            elif spec.kind == "relu":
                self.layers.append(_ReLU())
            elif spec.kind == "batchnorm":
                self.layers.append(_BatchNorm1d(spec))
            elif spec.kind == "dropout":
                self.layers.append(_Dropout(spec, rng))
            else:
                raise ConfigError(f"unknown layer kind '{spec.kind}'")
        linears = [s for s in self.specs if s.kind == "linear"]
        if not linears:
            raise ConfigError("network needs at least one linear layer")
        self.input_dim = linears[0].in_dim
        self.output_dim = linears[-1].out_dim
        self.params: list[Param] = [p for layer in self.layers for p in layer.params()]
        self.rng = rng
        self.input_grad = None
        self._input = None
        self._can_backward = False

    def _init_for(self, index: int) -> str:
        # the activation that follows a linear layer decides its init scheme
        for spec in self.specs[index + 1:]:
            if spec.kind in _ACTIVATIONS:
                return spec.kind
            if spec.kind == "linear":
                break
        return "tanh"

    def forward(self, x: np.ndarray, mode: Mode = Mode.EVAL) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigError(
                f"expected batch of shape (n, {self.input_dim}), got {x.shape}"
            )
        if mode is not Mode.EVAL:
            self._input = x
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, mode)
            # allocation-free screen; a non-finite entry makes the sum
            # non-finite, and the rare all-finite overflow of the sum is
            # ruled out by the exact check before raising
            if not math.isfinite(float(h.sum())) and not np.all(np.isfinite(h)):
                raise NumericalError(
                    f"non-finite activation after layer {i} ({self.specs[i].kind})"
                )
        self._can_backward = mode is not Mode.EVAL
        return h

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backpropagate ``dlogits`` and fill every ``param.grad``.

        Returns the gradient with respect to the network input, which is
        also kept on ``self.input_grad`` for mask gradient routing.
        """
        if not self._can_backward:
            raise StateError("backward called without a cached TRAIN/REPLAY forward")
        d = np.asarray(dlogits, dtype=np.float64)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        self.input_grad = d
        self._can_backward = False
        return d

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    # -- state snapshots (used for early-stopping checkpoints) -------------

    def state_copy(self) -> list[np.ndarray]:
        state = [p.value.copy() for p in self.params]
        for layer in self.layers:
            if isinstance(layer, _BatchNorm1d):
                state.append(layer.running_mean.copy())
                state.append(layer.running_var.copy())
        return state

    def load_state(self, state: list[np.ndarray]):
        it = iter(state)
        for p in self.params:
            p.value[...] = next(it)
        for layer in self.layers:
            if isinstance(layer, _BatchNorm1d):
                layer.running_mean[...] = next(it)
                layer.running_var[...] = next(it)

    def weight_params(self) -> list[Param]:
        """The linear weight matrices (biases and batchnorm affine excluded)."""
        return [p for p in self.params if p.kind == "weight"]

    def param_index(self, param: Param) -> int:
        for i, p in enumerate(self.params):
            if p is param:
                return i
        raise ValueError("param does not belong to this network")


def build_mlp(
    in_dim: int,
    hidden: tuple[int, ...] | list[int],
    out_dim: int,
    activation: str = "tanh",
    batchnorm: bool = False,
    dropout: float = 0.0,
) -> list[LayerSpec]:
    """Layer specs for an MLP: linear -> activation [-> batchnorm] [-> dropout] per hidden layer."""
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation '{activation}'")
    specs = []
    prev = in_dim
    for width in hidden:
        specs.append(LayerSpec("linear", in_dim=prev, out_dim=width))
        specs.append(LayerSpec(activation))
        if batchnorm:
            specs.append(LayerSpec("batchnorm", dim=width))
        if dropout > 0.0:
            specs.append(LayerSpec("dropout", p=dropout))
        prev = width
    specs.append(LayerSpec("linear", in_dim=prev, out_dim=out_dim))
    return specs


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_grad(
    logits: np.ndarray, labels: np.ndarray, loss_kind: LossKind
) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its exact gradient w.r.t. the logits.

    SOFTMAX_CE expects integer class labels of shape (n,) and logits of
    shape (n, c). SIGMOID_BCE expects 0/1 targets and logits of shape (n,)
    or (n, 1).
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if loss_kind is LossKind.SOFTMAX_CE:
        if logits.ndim != 2 or logits.shape[1] < 2:
            raise ValueError(f"softmax cross-entropy needs (n, c>=2) logits, got {logits.shape}")
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
        labels = labels.astype(np.int64)
        c = logits.shape[1]
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"label out of range [0, {c})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(lse - shifted[np.arange(n), labels]))
        probs = np.exp(shifted - lse[:, None])
        dlogits = probs
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        return loss, dlogits
    if loss_kind is LossKind.SIGMOID_BCE:
        z = logits.reshape(-1) if logits.ndim == 2 and logits.shape[1] == 1 else logits
        if z.ndim != 1 or z.shape[0] != n:
            raise ValueError(f"sigmoid BCE needs (n,) or (n, 1) logits, got {logits.shape}")
        y = np.asarray(labels, dtype=np.float64).reshape(-1)
        if y.shape[0] != n:
            raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
        if np.any((y != 0.0) & (y != 1.0)):
            raise ValueError("sigmoid BCE targets must be 0 or 1")
        loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
        dz = (_sigmoid(z) - y) / n
        return loss, dz.reshape(logits.shape)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def predict_scores(logits: np.ndarray, loss_kind: LossKind) -> np.ndarray:
    """Positive-class probability (binary) or per-class probabilities (multiclass)."""
    logits = np.asarray(logits, dtype=np.float64)
    if loss_kind is LossKind.SIGMOID_BCE:
        return _sigmoid(logits.reshape(-1))
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def accuracy(logits: np.ndarray, labels: np.ndarray, loss_kind: LossKind) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if loss_kind is LossKind.SIGMOID_BCE:
        pred = (logits.reshape(-1) >= 0.0).astype(np.int64)
    else:
        pred = logits.argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels).reshape(-1)))


def finite_diff_grad(
    net: Network,
    batch: np.ndarray,
    labels: np.ndarray,
    loss_kind: LossKind,
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of the batch-mean loss per parameter.

    Evaluates the network in REPLAY mode so the loss is a deterministic
    function of the parameters: dropout masks sampled by the most recent
    TRAIN forward are reused (sampled once here if none exist yet) and
    batch norm normalizes with batch statistics without updating the
    running estimates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    batch = np.asarray(batch, dtype=np.float64)

    def loss_at_point() -> float:
        logits = net.forward(batch, Mode.REPLAY)
        return loss_and_grad(logits, labels, loss_kind)[0]

    loss_at_point()  # fixes dropout masks before any perturbation
    grads = []
    for p in net.params:
        g = np.zeros_like(p.value)
        flat_v = p.value.ravel()
        flat_g = g.ravel()
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + step
            up = loss_at_point()
            flat_v[i] = orig - step
            down = loss_at_point()
            flat_v[i] = orig
            flat_g[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads
