"""Binding mask entries to network inputs and weight tensors.

A :class:`MaskSpec` lays the mask out as a flat vector: each binding owns a
contiguous slice. Input bindings cover feature columns (one entry per
feature), weight bindings cover a whole weight matrix elementwise (one
entry per scalar, row-major). Masking is non-destructive: applying a mask
returns new arrays and never touches the originals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StateError
from .nn import Network


@dataclass(frozen=True)
class InputBinding:
    """Masks the given input feature columns, one mask entry per column."""

    features: tuple[int, ...]


@dataclass(frozen=True)
class WeightBinding:
    """Masks one weight matrix elementwise; ``param`` indexes Network.params."""

    param: int


class MaskSpec:
    def __init__(self, bindings, network: Network):
        self.bindings = list(bindings)
        if not self.bindings:
            raise ConfigError("mask spec needs at least one binding")
        self._slices: list[slice] = []
        self._shapes: list[tuple[int, ...] | None] = []
        seen_features: set[int] = set()
        seen_params: set[int] = set()
        offset = 0
        for binding in self.bindings:
            if isinstance(binding, InputBinding):
                feats = tuple(binding.features)
                if not feats:
                    raise ConfigError("input binding with no features")
                for f in feats:
                    if not 0 <= f < network.input_dim:
                        raise ConfigError(f"input feature {f} outside [0, {network.input_dim})")
                    if f in seen_features:
                        raise ConfigError(f"input feature {f} bound twice")
                    seen_features.add(f)
                size = len(feats)
                self._shapes.append(None)
            elif isinstance(binding, WeightBinding):
                if not 0 <= binding.param < len(network.params):
                    raise ConfigError(f"param index {binding.param} does not exist")
                if binding.param in seen_params:
                    raise ConfigError(f"param {binding.param} bound twice")
                param = network.params[binding.param]
                if param.kind != "weight":
                    raise ConfigError(f"param {binding.param} is a {param.kind}, not a weight matrix")
                seen_params.add(binding.param)
                size = param.size
                self._shapes.append(param.shape)
            else:
                raise ConfigError(f"unknown binding type {type(binding).__name__}")
            self._slices.append(slice(offset, offset + size))
            offset += size
        self.k = offset
        self.n = network.input_dim + sum(p.size for p in network.params)
        if self.k > self.n:
            raise ConfigError("mask has more entries than maskable values")

    @classmethod
    def input_features(cls, network: Network, features=None) -> "MaskSpec":
        """One mask entry per input feature (all features by default)."""
        if features is None:
            features = range(network.input_dim)
        return cls([InputBinding(tuple(features))], network)

    @classmethod
    def all_weights(cls, network: Network) -> "MaskSpec":
        """One mask entry per linear weight scalar; biases are never masked."""
        bindings = [
            WeightBinding(i) for i, p in enumerate(network.params) if p.kind == "weight"
        ]
        return cls(bindings, network)

    def entry_slice(self, binding_index: int) -> slice:
        return self._slices[binding_index]

    def weight_slices(self) -> dict[int, tuple[slice, tuple[int, ...]]]:
        """Param index -> (mask slice, weight shape) for every weight binding."""
        out = {}
        for binding, sl, shape in zip(self.bindings, self._slices, self._shapes):
            if isinstance(binding, WeightBinding):
                out[binding.param] = (sl, shape)
        return out

    def input_slices(self) -> list[tuple[slice, tuple[int, ...]]]:
        """(mask slice, feature columns) for every input binding."""
        return [
            (sl, binding.features)
            for binding, sl in zip(self.bindings, self._slices)
            if isinstance(binding, InputBinding)
        ]


def apply_mask(
    spec: MaskSpec, b: np.ndarray, inputs: np.ndarray | None, params
) -> tuple[np.ndarray | None, dict[int, np.ndarray]]:
    """Multiply bound entries by their mask bits.

    Returns the masked input batch (or the inputs unchanged when nothing
    binds them) and a dict mapping param index to the masked weight array.
    Unbound values pass through; originals are left intact.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (spec.k,):
        raise ConfigError(f"mask length {b.shape} != spec k ({spec.k},)")
    masked_inputs = inputs
    masked_params: dict[int, np.ndarray] = {}
    for binding, sl, shape in zip(spec.bindings, spec._slices, spec._shapes):
        bits = b[sl]
        if isinstance(binding, InputBinding):
            if inputs is None:
                raise ConfigError("spec binds input features but no inputs were given")
            if masked_inputs is inputs:
                masked_inputs = np.array(inputs, dtype=np.float64)
            cols = list(binding.features)
            masked_inputs[:, cols] *= bits
        else:
            value = params[binding.param].value
            masked_params[binding.param] = value * bits.reshape(shape)
    return masked_inputs, masked_params


def mask_grad(
    spec: MaskSpec,
    b: np.ndarray,
    inputs: np.ndarray | None,
    param_values,
    dinputs: np.ndarray | None,
    dparams,
) -> np.ndarray:
    """Route gradients from masked weights/inputs back to the mask entries.

    For a weight-bound entry the gradient is W_i * dW'_i with W_i the
    original (unmasked) weight and dW'_i the gradient at the masked weight;
    masked-out entries therefore still receive gradient, which is what lets
    bits grow back. For an input-feature entry it is the per-column sum
    over the batch of x * dx'.
    """
    g = np.empty(spec.k)
    for binding, sl in zip(spec.bindings, spec._slices):
        if isinstance(binding, InputBinding):
            if inputs is None or dinputs is None:
                raise StateError("input binding needs inputs and their gradients")
            cols = list(binding.features)
            g[sl] = (inputs[:, cols] * dinputs[:, cols]).sum(axis=0)
        else:
            value = param_values[binding.param]
            grad = dparams[binding.param]
            if grad is None:
                raise StateError(f"no gradient buffer for param {binding.param}")
            g[sl] = (value * grad).ravel()
    return g


def weight_grad_through_mask(b: np.ndarray, dmasked: np.ndarray) -> np.ndarray:
    """Gradient for the underlying weights: b * dW'. Masked-out weights get zero."""
    return np.asarray(b, dtype=np.float64) * dmasked
