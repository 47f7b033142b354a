"""Binary mask state machine.

Real-valued latent weights are deterministically quantized to a binary mask
by sign; the gradient passes through the quantizer unchanged (identity
straight-through estimator). A quadratic penalty on the mask contributes a
constant ``penalty`` to the gradient of every active bit, so with a large
enough step budget the penalty alone drives bits to zero. The smoothed mask
is an exponential moving average of the binary mask, updated every
iteration including warmup.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import StateError
from .optim import Adam


def quantize(b_r: np.ndarray) -> np.ndarray:
    """Binary mask from latent weights: 1 where b_r >= 0, else 0.

    Zero quantizes to 1; that is the documented tie rule.
    """
    return (np.asarray(b_r) >= 0.0).astype(np.float64)


def ste_backward(grad_wrt_mask: np.ndarray) -> np.ndarray:
    """Identity straight-through gradient: returns the input unchanged."""
    return grad_wrt_mask


def penalty_grad(b: np.ndarray, penalty: float) -> np.ndarray:
    """Gradient of the quadratic mask penalty: penalty * b elementwise."""
    if penalty < 0:
        raise ValueError("penalty coefficient must be >= 0")
    return penalty * np.asarray(b, dtype=np.float64)


def penalty_value(b: np.ndarray, penalty: float) -> float:
    """The reported penalty scalar, 0.5 * penalty * (number of active bits)."""
    if penalty < 0:
        raise ValueError("penalty coefficient must be >= 0")
    return 0.5 * penalty * float(np.sum(b))


def warmup_epochs(epochs: int, warmup_fraction: float) -> int:
    """Number of initial epochs with frozen masks: round(warmup_fraction * epochs).

    Rounds half away from zero.
    """
    if not 0.0 <= warmup_fraction <= 1.0:
        raise ValueError("warmup_fraction must be in [0, 1]")
    return int(math.floor(warmup_fraction * epochs + 0.5))


def mask_converged(v_smooth: np.ndarray) -> bool:
    """True when at most 20% of the smoothed-mask values lie in [0.15, 0.85]."""
    v = np.asarray(v_smooth)
    if v.size == 0:
        raise ValueError("empty smoothed mask")
    inside = int(np.count_nonzero((v >= 0.15) & (v <= 0.85)))
    return inside <= 0.2 * v.size


class MaskState:
    """Latent mask weights plus everything needed to train them.

    Starts frozen with ``b_r = alpha0`` everywhere (an all-ones mask for
    alpha0 > 0). While frozen, :meth:`update` refuses to run; the training
    loop unfreezes after the warmup epochs. Invariants maintained by every
    operation: ``b == quantize(b_r)``, ``|b_r| <= alpha1``, and
    ``v_smooth`` entries stay in [0, 1].
    """

    def __init__(
        self,
        size: int,
        penalty: float,
        alpha0: float = 0.3,
        alpha1: float = 1.0,
        gamma: float = 0.9,
        eta0: float = 1e-3,
        eta1: float = 1e-5,
        warmup_fraction: float = 0.1,
    ):
        if size < 1:
            raise ValueError("mask size must be >= 1")
        if penalty < 0:
            raise ValueError("penalty coefficient must be >= 0")
        if not 0.0 <= warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        self.b_r = np.full(size, float(alpha0))
        self.b = quantize(self.b_r)
        self.v_smooth = np.zeros(size)
        self.adam = Adam(size)
        self.penalty = penalty
        self.alpha0 = alpha0
        self.alpha1 = alpha1
        self.gamma = gamma
        self.eta0 = eta0
        self.eta1 = eta1
        self.warmup_fraction = warmup_fraction
        self.frozen = True

    @property
    def size(self) -> int:
        return self.b_r.size

    @property
    def sparsity(self) -> float:
        """Fraction of mask bits equal to zero."""
        return float(1.0 - self.b.mean())

    def unfreeze(self):
        self.frozen = False

    def update(self, task_grad: np.ndarray, lr: float):
        """One mask step: add the penalty gradient, Adam, clip, requantize."""
        if self.frozen:
            raise StateError("mask is frozen; unfreeze after warmup before updating")
        task_grad = np.asarray(task_grad, dtype=np.float64)
        if task_grad.shape != self.b_r.shape:
            raise ValueError(f"gradient shape {task_grad.shape} != mask shape {self.b_r.shape}")
        g = ste_backward(task_grad + penalty_grad(self.b, self.penalty))
        self.adam.step(self.b_r, g, lr)
        np.clip(self.b_r, -self.alpha1, self.alpha1, out=self.b_r)
        self.b = quantize(self.b_r)

    def smooth_update(self):
        """Moving-average update of the smoothed mask from the current bits."""
        self.v_smooth *= self.gamma
        self.v_smooth += (1.0 - self.gamma) * self.b

    def converged(self) -> bool:
        return mask_converged(self.v_smooth)

    # -- checkpoint serialization ------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "b_r": self.b_r.tolist(),
            "v_smooth": self.v_smooth.tolist(),
            "adam_m": self.adam.m.tolist(),
            "adam_v": self.adam.v.tolist(),
            "adam_t": self.adam.t,
            "penalty": self.penalty,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "gamma": self.gamma,
            "eta0": self.eta0,
            "eta1": self.eta1,
            "warmup_fraction": self.warmup_fraction,
            "frozen": self.frozen,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "MaskState":
        state = cls(
            size=len(record["b_r"]),
            penalty=record["penalty"],
            alpha0=record["alpha0"],
            alpha1=record["alpha1"],
            gamma=record["gamma"],
            eta0=record["eta0"],
            eta1=record["eta1"],
            warmup_fraction=record["warmup_fraction"],
        )
        state.b_r = np.asarray(record["b_r"], dtype=np.float64)
        state.b = quantize(state.b_r)
        state.v_smooth = np.asarray(record["v_smooth"], dtype=np.float64)
        state.adam.m = np.asarray(record["adam_m"], dtype=np.float64)
        state.adam.v = np.asarray(record["adam_v"], dtype=np.float64)
        state.adam.t = int(record["adam_t"])
        state.frozen = bool(record["frozen"])
        return state
