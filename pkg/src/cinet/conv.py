"""Continual temporal/3D convolution as a FIR filter over a frame stream.

Temporal taps are indexed newest-first, like FIR coefficients: tap ``k``
multiplies the frame ``k * dilation`` steps back from the emission step.
Spatially each tap is an ordinary stride-1 cross-correlation.  Zero padding
is leading-only (``padding`` virtual zero frames before the stream); trailing
padding would require peeking into the future and is never applied.

Two step-mode arrangements are provided:

- ``pre``  (direct form): cache raw input frames, convolve when the window
  is complete.
- ``post`` (transposed form): convolve each arriving frame with every tap
  eagerly and accumulate into the emission slot each product completes.

Both emit on exactly the same schedule and differ only in summation order.
``auto`` picks whichever caches fewer elements.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DimensionError
from .module import CoModule, OpCount, StepOutput
from .tensor import Tensor


def _spatial(xa: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlate (..., C, H, W) with (O, C, KH, KW), stride 1, no pad."""
    kh, kw = w.shape[2], w.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(xa, (kh, kw), axis=(-2, -1))
    return np.einsum("...cijab,ocab->...oij", windows, w, optimize=True)


class _ConvState:
    __slots__ = ("fifo", "acc", "t", "form")

    def __init__(self, form: str):
        self.fifo = deque()  # pre: raw frames, newest right
        self.acc = {}  # post: emission step -> partial sum
        self.t = 0
        self.form = form  # resolved lazily for "auto"


class TemporalConv(CoModule):
    """Causal temporal convolution over (C_in, H, W) frames."""

    def __init__(
        self,
        weights: Tensor,
        bias: Tensor,
        dilation: int = 1,
        padding: int = 0,
        temporal_stride: int = 1,
        form: str = "auto",
    ):
        if weights.rank != 5:
            raise DimensionError(f"weights must be (O,C,KT,KH,KW), got {weights.shape}")
        self.c_out, self.c_in, self.k_t, self.k_h, self.k_w = weights.shape
        if bias.shape != (self.c_out,):
            raise DimensionError(f"bias shape {bias.shape} != ({self.c_out},)")
        if dilation < 1:
            raise ValueError("dilation must be >= 1")
        if temporal_stride < 1:
            raise ValueError("stride must be >= 1")
        if form not in ("pre", "post", "auto"):
            raise ValueError(f"unknown form {form!r}")
        rf = (self.k_t - 1) * dilation + 1
        if not 0 <= padding <= rf - 1:
            raise ValueError(f"padding {padding} outside [0, {rf - 1}]")
        self.weights = weights
        self.bias = bias
        self.dilation = dilation
        self.padding = padding
        self.temporal_stride = temporal_stride
        self.form = form
        self._rf = rf

    # -- temporal properties --------------------------------------------------

    def delay(self) -> int:
        return self._rf - 1 - self.padding

    def receptive_field(self) -> int:
        return self._rf

    def stride(self) -> int:
        return self.temporal_stride

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        c, h, w = frame_shape
        if c != self.c_in:
            raise DimensionError(f"expected {self.c_in} channels, got {c}")
        if self.k_h > h or self.k_w > w:
            raise DimensionError(f"kernel ({self.k_h},{self.k_w}) larger than frame ({h},{w})")
        return (self.c_out, h - self.k_h + 1, w - self.k_w + 1)

    def cache_elements(self, frame_shape: tuple) -> dict:
        """Cache sizes of both arrangements; ties go to ``pre``."""
        c, h, w = frame_shape
        oc, oh, ow = self.out_frame_shape(frame_shape)
        pre = (self._rf - 1) * c * h * w
        post = (self._rf - 1) * oc * oh * ow
        return {"pre": pre, "post": post, "chosen": "pre" if pre <= post else "post"}

    # -- clip mode --------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        if x.rank != 4:
            raise DimensionError(f"clip must be (T,C,H,W), got {x.shape}")
        t_in = x.shape[0]
        out_shape = self.out_frame_shape(x.shape[1:])
        n_out = self.out_len(t_in)
        if n_out == 0:
            return Tensor.wrap(np.zeros((0,) + out_shape, dtype=x.array.dtype))
        wa = self.weights.array.astype(x.array.dtype, copy=False)
        ba = self.bias.array.astype(x.array.dtype, copy=False)
        out = np.empty((n_out,) + out_shape, dtype=x.array.dtype)
        out[:] = ba[:, None, None]
        # emission j happens at input step delay + j*stride; tap k reads the
        # frame k*dilation steps back (virtual zeros for negative indices)
        steps = self.delay() + np.arange(n_out) * self.temporal_stride
        for k in range(self.k_t):
            src = steps - k * self.dilation
            valid = src >= 0
            if not valid.any():
                continue
            out[valid] += _spatial(x.array[src[valid]], wa[:, :, k])
        return Tensor.wrap(out)

    # -- step mode ----------------------------------------------------------------

    def init_state(self) -> _ConvState:
        return _ConvState(self.form)

    def _emits_at(self, t: int) -> bool:
        return t >= self.delay() and (t - self.delay()) % self.temporal_stride == 0

    def forward_step(self, state: _ConvState, x_t: Tensor) -> StepOutput:
        if x_t.rank != 3:
            raise DimensionError(f"frame must be (C,H,W), got {x_t.shape}")
        out_shape = self.out_frame_shape(x_t.shape)
        if state.form == "auto":
            state.form = self.cache_elements(x_t.shape)["chosen"]
        xa = x_t.array
        wa = self.weights.array.astype(xa.dtype, copy=False)
        ba = self.bias.array.astype(xa.dtype, copy=False)
        t = state.t
        state.t += 1
        if state.form == "pre":
            y = None
            if self._emits_at(t):
                frames = []
                taps = []
                for k in range(self.k_t):
                    back = k * self.dilation
                    if back == 0:
                        frames.append(xa)
                        taps.append(k)
                    elif back <= len(state.fifo):
                        frames.append(state.fifo[-back])
                        taps.append(k)
                    # frames further back are virtual zeros
                stacked = np.stack(frames)
                kh, kw = self.k_h, self.k_w
                windows = np.lib.stride_tricks.sliding_window_view(
                    stacked, (kh, kw), axis=(-2, -1))
                y = np.einsum("kcijab,ockab->oij", windows, wa[:, :, taps],
                              optimize=True) + ba[:, None, None]
            state.fifo.append(xa)
            if len(state.fifo) > self._rf - 1:
                state.fifo.popleft()
            return Tensor.wrap(y.astype(xa.dtype, copy=False)) if y is not None else None
        # post: convolve the frame with every tap at once and route each
        # product to the emission it completes, skipping emissions the
        # stride suppresses so no discarded work is done
        live = [k for k in range(self.k_t) if self._emits_at(t + k * self.dilation)]
        if live:
            windows = np.lib.stride_tricks.sliding_window_view(
                xa, (self.k_h, self.k_w), axis=(-2, -1))
            contribs = np.einsum("cijab,ockab->koij", windows, wa[:, :, live],
                                 optimize=True)
            for contrib, k in zip(contribs, live):
                tgt = t + k * self.dilation
                slot = state.acc.get(tgt)
                state.acc[tgt] = contrib if slot is None else slot + contrib
        if self._emits_at(t):
            y = state.acc.pop(t) + ba[:, None, None]
            return Tensor.wrap(y.astype(xa.dtype, copy=False))
        return None

    # -- analytic cost ---------------------------------------------------------------

    def _per_emission(self, frame_shape: tuple) -> OpCount:
        oc, oh, ow = self.out_frame_shape(frame_shape)
        macs = oc * oh * ow * self.c_in * self.k_t * self.k_h * self.k_w
        return OpCount(macs=macs, other=oc * oh * ow)  # bias adds

    def step_cost(self, frame_shape: tuple) -> OpCount:
        per = self._per_emission(frame_shape)
        if self.temporal_stride == 1:
            return per
        return per.scaled(1 / self.temporal_stride)

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return self._per_emission(frame_shape).scaled(self.out_len(t))
