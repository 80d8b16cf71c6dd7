"""Continual temporal pooling: running windowed average and sliding maximum.

The average keeps a running sum (newest frame added, oldest subtracted) and
refreshes it from the cached window every ``refresh_interval`` steps, since
add/subtract accumulation is not exactly associative in floating point.  The
sum is accumulated in f64 regardless of the stream dtype.

The maximum uses a queue-with-max built from two stacks carrying elementwise
running maxima: amortized O(1) comparisons per element per step and never
more than ``window`` stacked frames.  Zero padding is rejected for max
pooling because padding with zeros corrupts maxima of negative signals.

A global-average head over a temporal receptive field is just an average
pool with ``window`` set to that receptive field.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DimensionError
from .module import CoModule, OpCount, StepOutput
from .tensor import Tensor


class _MaxQueue:
    """Elementwise queue-with-max over frames (two-stack arrangement)."""

    __slots__ = ("front_max", "back_raw", "back_max")

    def __init__(self):
        self.front_max = []  # suffix maxima; top is the oldest side's max
        self.back_raw = []
        self.back_max = []

    def __len__(self):
        return len(self.front_max) + len(self.back_raw)

    def push(self, x: np.ndarray) -> None:
        m = np.maximum(self.back_max[-1], x) if self.back_max else x
        self.back_raw.append(x)
        self.back_max.append(m)

    def pop_oldest(self) -> None:
        if not self.front_max:
            m = None
            while self.back_raw:
                x = self.back_raw.pop()
                m = x if m is None else np.maximum(m, x)
                self.front_max.append(m)
            self.back_max.clear()
        self.front_max.pop()

    def max(self) -> np.ndarray:
        if self.front_max and self.back_max:
            return np.maximum(self.front_max[-1], self.back_max[-1])
        return self.front_max[-1] if self.front_max else self.back_max[-1]


class _PoolState:
    __slots__ = ("t", "frame_shape", "dq", "running_sum", "virtual_zeros", "maxq")

    def __init__(self, padding: int):
        self.t = 0
        self.frame_shape = None
        self.dq = deque()  # frames awaiting subtraction (avg)
        self.running_sum = None  # f64 accumulator
        self.virtual_zeros = padding  # leading zeros not yet slid out
        self.maxq = _MaxQueue()


class TemporalPool(CoModule):
    def __init__(self, kind: str, window: int, padding: int = 0, refresh_interval: int = 4096):
        if kind not in ("avg", "max"):
            raise ValueError(f"unknown pooling kind {kind!r}")
        if window < 1:
            raise ValueError("window must be >= 1")
        if kind == "max" and padding != 0:
            raise ValueError("zero padding is not valid for max pooling")
        if not 0 <= padding <= window - 1:
            raise ValueError(f"padding {padding} outside [0, {window - 1}]")
        self.kind = kind
        self.window = window
        self.padding = padding
        self.refresh_interval = refresh_interval  # 0 disables the refresh

    def delay(self) -> int:
        return self.window - 1 - self.padding

    def receptive_field(self) -> int:
        return self.window

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        return tuple(frame_shape)

    # -- clip mode -------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        t_in = x.shape[0]
        n_out = self.out_len(t_in)
        if n_out == 0:
            return Tensor.wrap(np.zeros((0,) + x.shape[1:], dtype=x.array.dtype))
        if self.kind == "avg":
            # cumulative sums over the zero-prefixed sequence
            csum = np.cumsum(x.array.astype(np.float64), axis=0)
            csum = np.concatenate([np.zeros((1,) + x.shape[1:]), csum], axis=0)
            out = np.empty((n_out,) + x.shape[1:], dtype=np.float64)
            for j in range(n_out):
                end = self.delay() + j + 1  # exclusive, in real-frame indexing
                start = max(0, end - self.window)
                out[j] = (csum[end] - csum[start]) / self.window
            return Tensor.wrap(out.astype(x.array.dtype))
        windows = np.lib.stride_tricks.sliding_window_view(x.array, self.window, axis=0)
        return Tensor.wrap(np.ascontiguousarray(windows.max(axis=-1)))

    # -- step mode ----------------------------------------------------------------

    def init_state(self) -> _PoolState:
        return _PoolState(self.padding)

    def forward_step(self, state: _PoolState, x_t: Tensor) -> StepOutput:
        if state.frame_shape is None:
            state.frame_shape = x_t.shape
        elif x_t.shape != state.frame_shape:
            raise DimensionError(
                f"frame shape drift: {x_t.shape} after {state.frame_shape}"
            )
        t = state.t
        state.t += 1
        xa = x_t.array
        if self.kind == "max":
            state.maxq.push(xa)
            if len(state.maxq) > self.window:
                state.maxq.pop_oldest()
            if t >= self.window - 1:
                return Tensor.wrap(state.maxq.max().astype(xa.dtype, copy=False))
            return None
        if state.running_sum is None:
            state.running_sum = np.zeros(x_t.shape, dtype=np.float64)
        if self.refresh_interval and t and t % self.refresh_interval == 0:
            state.running_sum = sum(
                (f.astype(np.float64) for f in state.dq),
                np.zeros(state.frame_shape, dtype=np.float64),
            )
        state.running_sum = state.running_sum + xa
        state.dq.append(xa)
        if t < self.delay():
            return None
        y = (state.running_sum / self.window).astype(xa.dtype)
        # slide: the frame leaving before the next emission is either one of
        # the virtual leading zeros or the oldest cached real frame
        if state.virtual_zeros > 0:
            state.virtual_zeros -= 1
        else:
            state.running_sum = state.running_sum - state.dq.popleft()
        return Tensor.wrap(y)

    # -- analytic cost ----------------------------------------------------------
    # avg step: add + subtract + divide per element; max step: one push
    # comparison, one output combine, one amortized flip comparison.
    # Maintenance refreshes are excluded from the counts.

    def step_cost(self, frame_shape: tuple) -> OpCount:
        n = int(np.prod(frame_shape))
        return OpCount(macs=0, other=3 * n)

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        n = int(np.prod(frame_shape))
        per_out = n * self.window if self.kind == "avg" else n * (self.window - 1)
        return OpCount(macs=0, other=per_out * self.out_len(t))
