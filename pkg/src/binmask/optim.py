"""Optimizers and learning-rate schedules.

SGD carries classical momentum with weight decay folded into the gradient
(so a parameter with zero task gradient contracts by exactly 1 - lr*wd per
step at momentum 0). Adam comes in two flavours: a single-array form used
for the latent mask weights, and a decoupled-decay variant (AdamW) for
network parameters. Steps run in place on preallocated scratch buffers;
these run once per minibatch, so avoiding temporaries keeps the masking
overhead small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def _check_finite(grad: np.ndarray, who: str):
    # the sum is non-finite whenever any entry is; an all-finite overflow of
    # the sum only happens with astronomically large gradients, which is a
    # genuine divergence signal anyway
    if not math.isfinite(float(grad.sum())):
        raise NumericalError(f"non-finite gradient in {who} step")


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine annealing from start_lr at step 0 to end_lr at the last step."""

    start_lr: float
    end_lr: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def at(self, step: int) -> float:
        return cosine_lr(self, step)


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    if schedule.total_steps == 1:
        return schedule.start_lr
    span = schedule.total_steps - 1
    cos = math.cos(math.pi * step / span)
    return schedule.end_lr + 0.5 * (schedule.start_lr - schedule.end_lr) * (cos + 1.0)


class SGD:
    """Momentum SGD over a list of :class:`~binmask.nn.Param`.

    Update rule per parameter:
        buf <- momentum * buf + (grad + weight_decay * value)
        value <- value - lr * buf
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p.value) for p in self.params]
        self._scratch = [np.empty_like(p.value) for p in self.params]

    def step(self):
        for p, buf, tmp in zip(self.params, self.buffers, self._scratch):
            _check_finite(p.grad, "SGD")
            if self.momentum != 0.0:
                buf *= self.momentum
                buf += p.grad
            else:
                buf[...] = p.grad
            if self.weight_decay != 0.0:
                np.multiply(p.value, self.weight_decay, out=tmp)
                buf += tmp
            np.multiply(buf, self.lr, out=tmp)
            p.value -= tmp


class Adam:
    """Adam with bias correction on a single flat array.

    The step counter ``t`` advances once per :meth:`step` call. For a
    constant gradient the update magnitude converges to ``lr`` regardless
    of the gradient scale.
    """

    def __init__(
        self,
        size: int,
        beta1: float = _ADAM_BETA1,
        beta2: float = _ADAM_BETA2,
        eps: float = _ADAM_EPS,
    ):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._s1 = np.empty(size)
        self._s2 = np.empty(size)

    def step(self, value: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """Update ``value`` in place and return it."""
        if lr < 0:
            raise ValueError("lr must be >= 0")
        _check_finite(grad, "Adam")
        self.t += 1
        s1, s2 = self._s1, self._s2
        self.m *= self.beta1
        np.multiply(grad, 1.0 - self.beta1, out=s1)
        self.m += s1
        self.v *= self.beta2
        np.multiply(grad, grad, out=s1)
        s1 *= 1.0 - self.beta2
        self.v += s1
        np.divide(self.v, 1.0 - self.beta2 ** self.t, out=s1)
        np.sqrt(s1, out=s1)
        s1 += self.eps
        np.divide(self.m, 1.0 - self.beta1 ** self.t, out=s2)
        s2 /= s1
        s2 *= lr
        value -= s2
        return value


class AdamW:
    """Adam over a parameter list with decoupled weight decay."""

    def __init__(
        self,
        params,
        lr: float,
        weight_decay: float = 0.01,
        beta1: float = _ADAM_BETA1,
        beta2: float = _ADAM_BETA2,
        eps: float = _ADAM_EPS,
    ):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self._s1 = [np.empty_like(p.value) for p in self.params]
        self._s2 = [np.empty_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v, s1, s2 in zip(self.params, self.m, self.v, self._s1, self._s2):
            _check_finite(p.grad, "AdamW")
            if self.weight_decay != 0.0:
                p.value *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            np.multiply(p.grad, 1.0 - self.beta1, out=s1)
            m += s1
            v *= self.beta2
            np.multiply(p.grad, p.grad, out=s1)
            s1 *= 1.0 - self.beta2
            v += s1
            np.divide(v, bc2, out=s1)
            np.sqrt(s1, out=s1)
            s1 += self.eps
            np.divide(m, bc1, out=s2)
            s2 /= s1
            s2 *= self.lr
            p.value -= s2
