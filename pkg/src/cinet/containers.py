"""Containers: sequential chaining, delayed residuals, parallel branches.

Temporal bookkeeping rules (all integer, checked by property tests):

- sequential: stride multiplies through; each stage's delay and warm-up
  count at the container's input clock, scaled by the cumulative stride of
  the stages before it.  Worked example: stages with (delay, stride) of
  (2, 2) then (2, 1) compose to stride 2 and delay 2 + 2*2 = 6 input steps,
  because the second stage's two-step delay elapses at the halved clock.
- residual: the shortcut is buffered so its value lands on the emission
  aligned with the same input step; composite delay equals the inner delay.
  Residuals across strided modules are rejected rather than guessed at.
- parallel: all branches must share one stride (and emission phase); each
  is buffered up to the slowest branch, composite delay is the max.

Step mode never lets a not-ready placeholder enter arithmetic: a stage that
gets nothing simply produces nothing.  Alignment works by tagging each
branch emission with the input index it corresponds to (``t - delay``) and
reducing only matching tags, which also handles modules whose warm-up
exceeds their delay (windowed attention).
"""

from __future__ import annotations

from collections import deque
from typing import List, Sequence

import numpy as np

from .errors import DimensionError
from .module import CoModule, OpCount, StepOutput
from .tensor import Tensor


class Identity(CoModule):
    def delay(self) -> int:
        return 0

    def receptive_field(self) -> int:
        return 1

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        return tuple(frame_shape)

    def init_state(self):
        return None

    def forward(self, x: Tensor) -> Tensor:
        return x

    def forward_step(self, state, x_t: Tensor) -> StepOutput:
        return x_t

    def step_cost(self, frame_shape: tuple) -> OpCount:
        return OpCount()

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return OpCount()


class Pointwise(CoModule):
    """Per-step channel projection (a 1x1x1 convolution without bias)."""

    def __init__(self, weight: Tensor):
        if weight.rank != 2:
            raise DimensionError(f"weight must be (c_in, c_out), got {weight.shape}")
        self.weight = weight
        self.c_in, self.c_out = weight.shape

    def delay(self) -> int:
        return 0

    def receptive_field(self) -> int:
        return 1

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        if frame_shape[0] != self.c_in:
            raise DimensionError(f"expected {self.c_in} channels, got {frame_shape[0]}")
        return (self.c_out,) + tuple(frame_shape[1:])

    def init_state(self):
        return None

    def _apply(self, xa: np.ndarray, channel_axis: int) -> np.ndarray:
        w = self.weight.array.astype(xa.dtype)
        moved = np.moveaxis(xa, channel_axis, -1)
        return np.moveaxis(moved @ w, -1, channel_axis)

    def forward(self, x: Tensor) -> Tensor:
        return Tensor.wrap(self._apply(x.array, channel_axis=1))

    def forward_step(self, state, x_t: Tensor) -> StepOutput:
        return Tensor.wrap(self._apply(x_t.array, channel_axis=0))

    def step_cost(self, frame_shape: tuple) -> OpCount:
        spatial = int(np.prod(frame_shape[1:])) if len(frame_shape) > 1 else 1
        return OpCount(macs=self.c_in * self.c_out * spatial)

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return self.step_cost(frame_shape).scaled(t)


class Sequential(CoModule):
    def __init__(self, modules: Sequence[CoModule]):
        if not modules:
            raise ValueError("sequential needs at least one stage")
        self.modules = list(modules)

    def children(self) -> List[CoModule]:
        return list(self.modules)

    def _cumulative(self):
        """(stage, stride of everything before it) pairs."""
        s = 1
        for m in self.modules:
            yield m, s
            s *= m.stride()

    def delay(self) -> int:
        return sum(m.delay() * s for m, s in self._cumulative())

    def warmup(self) -> int:
        return sum(m.warmup() * s for m, s in self._cumulative())

    def receptive_field(self) -> int:
        return 1 + sum((m.receptive_field() - 1) * s for m, s in self._cumulative())

    def stride(self) -> int:
        s = 1
        for m in self.modules:
            s *= m.stride()
        return s

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        for m in self.modules:
            frame_shape = m.out_frame_shape(frame_shape)
        return frame_shape

    def init_state(self) -> list:
        return [m.init_state() for m in self.modules]

    def forward(self, x: Tensor) -> Tensor:
        for m in self.modules:
            x = m.forward(x)
        return x

    def forward_step(self, state: list, x_t: Tensor) -> StepOutput:
        y = x_t
        for m, s in zip(self.modules, state):
            y = m.forward_step(s, y)
            if y is None:
                return None
        return y

    def step_cost(self, frame_shape: tuple) -> OpCount:
        total = OpCount()
        for m, s in self._cumulative():
            total = total + m.step_cost(frame_shape).scaled(1 / s if s > 1 else 1)
            frame_shape = m.out_frame_shape(frame_shape)
        return total

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        total = OpCount()
        for m in self.modules:
            total = total + m.clip_cost(frame_shape, t)
            frame_shape = m.out_frame_shape(frame_shape)
            t = m.out_len(t)
        return total


class _AlignedQueue:
    """Emissions of one branch, tagged with the input index each aligns to."""

    __slots__ = ("q",)

    def __init__(self):
        self.q = deque()

    def push(self, index: int, value: np.ndarray) -> None:
        self.q.append((index, value))

    def discard_below(self, index: int) -> None:
        while self.q and self.q[0][0] < index:
            self.q.popleft()

    def front_index(self):
        return self.q[0][0] if self.q else None


def _aligned_pop(queues: List[_AlignedQueue]):
    """Pop one matching-tag value per queue, or None if not all are ready."""
    fronts = [q.front_index() for q in queues]
    if any(f is None for f in fronts):
        return None
    target = max(fronts)
    for q in queues:
        q.discard_below(target)
    if any(q.front_index() != target for q in queues):
        return None
    return [q.q.popleft()[1] for q in queues]


class _BranchingState:
    __slots__ = ("branches", "queues", "t")

    def __init__(self, branch_states):
        self.branches = branch_states
        self.queues = [_AlignedQueue() for _ in branch_states]
        self.t = 0


class Residual(CoModule):
    """Add a delayed shortcut around a stride-1 module."""

    def __init__(self, inner: CoModule, shortcut: CoModule | None = None):
        if inner.stride() != 1:
            raise ValueError("residual around a strided module is not defined")
        self.inner = inner
        self.shortcut = shortcut if shortcut is not None else Identity()

    def children(self) -> List[CoModule]:
        return [self.inner, self.shortcut]

    def delay(self) -> int:
        return self.inner.delay()

    def warmup(self) -> int:
        return self.inner.delay() + max(self.inner.warmup() - self.inner.delay(), 0)

    def receptive_field(self) -> int:
        d = self.inner.delay()
        return 1 + d + max(self.inner.receptive_field() - 1 - d, 0)

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        a = self.inner.out_frame_shape(frame_shape)
        b = self.shortcut.out_frame_shape(frame_shape)
        if a != b:
            raise DimensionError(f"branch frames differ: {a} vs {b}")
        return a

    def init_state(self) -> _BranchingState:
        return _BranchingState([self.inner.init_state(), self.shortcut.init_state()])

    def forward_step(self, state: _BranchingState, x_t: Tensor) -> StepOutput:
        t = state.t
        state.t += 1
        pairs = ((self.inner, 0), (self.shortcut, 1))
        for mod, i in pairs:
            y = mod.forward_step(state.branches[i], x_t)
            if y is not None:
                state.queues[i].push(t - mod.delay(), y.array)
        vals = _aligned_pop(state.queues)
        if vals is None:
            return None
        return Tensor.wrap(vals[0] + vals[1])

    def forward(self, x: Tensor) -> Tensor:
        main = self.inner.forward(x).array
        side = self.shortcut.forward(x).array
        # emission j of a branch aligns with input warmup_b - delay_b + j
        drop_main = self.warmup() - self.delay() - (self.inner.warmup() - self.inner.delay())
        drop_side = self.warmup() - self.delay()
        main = main[drop_main:]
        side = side[drop_side:]
        n = min(len(main), len(side))
        return Tensor.wrap(main[:n] + side[:n])

    def step_cost(self, frame_shape: tuple) -> OpCount:
        out = int(np.prod(self.out_frame_shape(frame_shape)))
        return (
            self.inner.step_cost(frame_shape)
            + self.shortcut.step_cost(frame_shape)
            + OpCount(other=out)
        )

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        out = int(np.prod(self.out_frame_shape(frame_shape)))
        return (
            self.inner.clip_cost(frame_shape, t)
            + self.shortcut.clip_cost(frame_shape, t)
            + OpCount(other=out).scaled(self.out_len(t))
        )


class Parallel(CoModule):
    """Run branches on the same stream and reduce aligned emissions."""

    def __init__(self, branches: Sequence[CoModule], reduce: str = "sum"):
        if not branches:
            raise ValueError("parallel needs at least one branch")
        if reduce not in ("sum", "concat"):
            raise ValueError(f"unknown reduce {reduce!r}")
        strides = {b.stride() for b in branches}
        if len(strides) != 1:
            raise ValueError(f"branch strides differ: {sorted(strides)}")
        s = strides.pop()
        phases = {(b.warmup() - b.delay()) % s for b in branches}
        if len(phases) != 1:
            raise ValueError("branch emission phases differ")
        self.branches = list(branches)
        self.reduce = reduce

    def children(self) -> List[CoModule]:
        return list(self.branches)

    def delay(self) -> int:
        return max(b.delay() for b in self.branches)

    def warmup(self) -> int:
        return self.delay() + max(b.warmup() - b.delay() for b in self.branches)

    def receptive_field(self) -> int:
        d = self.delay()
        return 1 + d + max(b.receptive_field() - 1 - b.delay() for b in self.branches)

    def stride(self) -> int:
        return self.branches[0].stride()

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        shapes = [b.out_frame_shape(frame_shape) for b in self.branches]
        if self.reduce == "sum":
            if len(set(shapes)) != 1:
                raise DimensionError(f"sum branches disagree: {shapes}")
            return shapes[0]
        tails = {s[1:] for s in shapes}
        if len(tails) != 1:
            raise DimensionError(f"concat branches disagree beyond channels: {shapes}")
        return (sum(s[0] for s in shapes),) + shapes[0][1:]

    def init_state(self) -> _BranchingState:
        return _BranchingState([b.init_state() for b in self.branches])

    def _combine(self, vals: List[np.ndarray], channel_axis: int = 0) -> Tensor:
        if self.reduce == "sum":
            out = vals[0]
            for v in vals[1:]:
                out = out + v
            return Tensor.wrap(out)
        return Tensor.wrap(np.concatenate(vals, axis=channel_axis))

    def forward_step(self, state: _BranchingState, x_t: Tensor) -> StepOutput:
        t = state.t
        state.t += 1
        for i, b in enumerate(self.branches):
            y = b.forward_step(state.branches[i], x_t)
            if y is not None:
                state.queues[i].push(t - b.delay(), y.array)
        vals = _aligned_pop(state.queues)
        if vals is None:
            return None
        return self._combine(vals)

    def forward(self, x: Tensor) -> Tensor:
        base = self.warmup() - self.delay()
        s = self.stride()
        outs = []
        for b in self.branches:
            o = b.forward(x).array
            drop = (base - (b.warmup() - b.delay())) // s
            outs.append(o[drop:])
        n = min(len(o) for o in outs)
        return self._combine([o[:n] for o in outs], channel_axis=1)

    def step_cost(self, frame_shape: tuple) -> OpCount:
        total = OpCount()
        for b in self.branches:
            total = total + b.step_cost(frame_shape)
        if self.reduce == "sum":
            out = int(np.prod(self.out_frame_shape(frame_shape)))
            adds = (len(self.branches) - 1) * out
            total = total + OpCount(other=adds).scaled(
                1 / self.stride() if self.stride() > 1 else 1
            )
        return total

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        total = OpCount()
        for b in self.branches:
            total = total + b.clip_cost(frame_shape, t)
        if self.reduce == "sum":
            out = int(np.prod(self.out_frame_shape(frame_shape)))
            total = total + OpCount(other=(len(self.branches) - 1) * out).scaled(self.out_len(t))
        return total
