"""Inference-mode normalization layers and the step-momentum helper.

Both layers are stateless, so their step and clip modes are identical by
construction.  Batch normalization uses frozen running statistics (training
is out of scope); layer normalization standardizes the last axis.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .module import CoModule, OpCount, StepOutput
from .tensor import Tensor


def step_momentum(m_seq: float, length: int) -> float:
    """Convert a full-sequence normalization momentum to its per-step value.

    ``length`` is the number of steps the layer observes per sequence; the
    conversion keeps the running statistics equivalent between stepwise and
    full-sequence processing: ``2 / (L * (2 / m_seq - 1) + 1)``.
    """
    if not 0.0 < m_seq <= 1.0:
        raise ValueError(f"sequence momentum {m_seq} outside (0, 1]")
    if length < 1:
        raise ValueError(f"sequence length {length} must be >= 1")
    if length == 1:
        return float(m_seq)  # exact algebraic identity; skip double rounding
    return 2.0 / (length * (2.0 / m_seq - 1.0) + 1.0)


class _Stateless:
    __slots__ = ()


class _StatelessModule(CoModule):
    def delay(self) -> int:
        return 0

    def receptive_field(self) -> int:
        return 1

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        return tuple(frame_shape)

    def init_state(self) -> _Stateless:
        return _Stateless()


class BatchNorm(_StatelessModule):
    """Per-channel affine normalization with frozen running statistics."""

    def __init__(self, gamma: Tensor, beta: Tensor, running_mean: Tensor,
                 running_var: Tensor, eps: float = 1e-5):
        c = gamma.shape[0]
        for name, t in (("beta", beta), ("running_mean", running_mean),
                        ("running_var", running_var)):
            if t.shape != (c,):
                raise DimensionError(f"{name} shape {t.shape} != ({c},)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if np.any(running_var.array < 0):
            raise ValueError("running_var must be nonnegative")
        self.channels = c
        self.eps = eps
        # fold into scale/shift so application is one MAC per element
        scale = gamma.array / np.sqrt(running_var.array + eps)
        self._scale = scale
        self._shift = beta.array - running_mean.array * scale
        self.gamma, self.beta = gamma, beta
        self.running_mean, self.running_var = running_mean, running_var

    def _apply(self, xa: np.ndarray, channel_axis: int) -> np.ndarray:
        if xa.shape[channel_axis] != self.channels:
            raise DimensionError(
                f"axis {channel_axis} extent {xa.shape[channel_axis]} != "
                f"{self.channels} channels"
            )
        shape = [1] * xa.ndim
        shape[channel_axis] = self.channels
        scale = self._scale.reshape(shape).astype(xa.dtype)
        shift = self._shift.reshape(shape).astype(xa.dtype)
        return xa * scale + shift

    def forward(self, x: Tensor) -> Tensor:
        return Tensor.wrap(self._apply(x.array, channel_axis=1))

    def forward_step(self, state, x_t: Tensor) -> StepOutput:
        return Tensor.wrap(self._apply(x_t.array, channel_axis=0))

    def step_cost(self, frame_shape: tuple) -> OpCount:
        return OpCount(macs=int(np.prod(frame_shape)))

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return self.step_cost(frame_shape).scaled(t)


def bn_apply(bn: BatchNorm, x: Tensor, channel_axis: int = 0) -> Tensor:
    """Functional form of :class:`BatchNorm` with an explicit channel axis."""
    return Tensor.wrap(bn._apply(x.array, channel_axis))


class LayerNorm(_StatelessModule):
    """Standardize the last axis with sample statistics, then affine."""

    def __init__(self, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
        if gamma.shape != beta.shape or gamma.rank != 1:
            raise DimensionError(f"gamma/beta must be equal rank-1, got {gamma.shape}/{beta.shape}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.d = gamma.shape[0]
        self.eps = eps
        self.gamma, self.beta = gamma, beta

    def _apply(self, xa: np.ndarray) -> np.ndarray:
        if xa.shape[-1] != self.d:
            raise DimensionError(f"last extent {xa.shape[-1]} != {self.d}")
        mean = xa.mean(axis=-1, keepdims=True)
        var = xa.var(axis=-1, keepdims=True)
        norm = (xa - mean) / np.sqrt(var + xa.dtype.type(self.eps))
        return norm * self.gamma.array.astype(xa.dtype) + self.beta.array.astype(xa.dtype)

    def forward(self, x: Tensor) -> Tensor:
        return Tensor.wrap(self._apply(x.array))

    def forward_step(self, state, x_t: Tensor) -> StepOutput:
        return Tensor.wrap(self._apply(x_t.array))

    def step_cost(self, frame_shape: tuple) -> OpCount:
        n = int(np.prod(frame_shape))
        tokens = n // self.d
        return OpCount(macs=2 * n, other=2 * n + 2 * tokens)

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return self.step_cost(frame_shape).scaled(t)


def ln_apply(ln: LayerNorm, x: Tensor) -> Tensor:
    """Functional form of :class:`LayerNorm` over the last axis."""
    return Tensor.wrap(ln._apply(x.array))
