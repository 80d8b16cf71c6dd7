"""Shared behavioural contract for continual layers and containers.

A ``CoModule`` owns its weights and hyperparameters immutably and exposes
clip mode (``forward``), step mode (``forward_step``) and batched step mode
(``forward_steps``).  One weight set serves all modes, and collecting the
ready step outputs of a fresh stream must reproduce ``forward`` exactly:
that equivalence is the core guarantee everything in this package is tested
against.

Step outputs are ``Tensor`` or ``None`` (not ready).  Two timing numbers
describe each module:

- ``delay()``: input steps between a frame's arrival and the emission of
  the output aligned with it.  A temporal convolution with kernel ``K_T``,
  dilation ``D_T`` and leading padding ``P_T`` has delay
  ``K_T + (K_T - 1)(D_T - 1) - P_T - 1``.
- ``warmup()``: number of initial steps with no emission.  For convolutions
  warm-up equals delay; windowed attention has warm-up ``n - 1`` but delay 0
  because its emission is aligned with the newest token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .tensor import Tensor

StepOutput = Optional[Tensor]


@dataclass(frozen=True)
class OpCount:
    """Arithmetic cost: multiply-accumulates plus other single ops.

    ``other`` counts additions, exponentials, divisions and comparisons at
    one FLOP each; ``flops`` uses the 2-FLOPs-per-MAC convention.
    """

    macs: float = 0
    other: float = 0

    @property
    def flops(self):
        return 2 * self.macs + self.other

    def __add__(self, o: "OpCount") -> "OpCount":
        return OpCount(self.macs + o.macs, self.other + o.other)

    def scaled(self, factor) -> "OpCount":
        return OpCount(self.macs * factor, self.other * factor)


class CoModule:
    """Base class; subclasses override the abstract pieces below."""

    # -- temporal properties ------------------------------------------------

    def delay(self) -> int:
        raise NotImplementedError

    def warmup(self) -> int:
        return self.delay()

    def receptive_field(self) -> int:
        raise NotImplementedError

    def stride(self) -> int:
        return 1

    # -- call modes ----------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        """Offline clip mode over a (T, ...) sequence."""
        raise NotImplementedError

    def init_state(self):
        raise NotImplementedError

    def forward_step(self, state, x_t: Tensor) -> StepOutput:
        raise NotImplementedError

    def forward_steps(self, state, x: Tensor) -> Tensor:
        """Feed each step of a (T, ...) sequence; stack the ready outputs."""
        outs = []
        for t in range(x.shape[0]):
            y = self.forward_step(state, Tensor.wrap(x.array[t]))
            if y is not None:
                outs.append(y.array)
        if not outs:
            frame = x.shape[1:]
            return Tensor.wrap(
                np.zeros((0,) + self.out_frame_shape(frame), dtype=x.array.dtype)
            )
        return Tensor.wrap(np.stack(outs, axis=0))

    # -- introspection for composition and counting --------------------------

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        raise NotImplementedError

    def children(self) -> List["CoModule"]:
        return []

    def out_len(self, t: int) -> int:
        """Clip-mode output length for an input of length ``t``."""
        avail = t - self.warmup()
        if avail <= 0:
            return 0
        return (avail - 1) // self.stride() + 1

    # -- analytic cost --------------------------------------------------------

    def step_cost(self, frame_shape: tuple) -> OpCount:
        """Steady-state arithmetic per consumed input step."""
        raise NotImplementedError

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        """Arithmetic of one offline forward pass over a length-``t`` clip."""
        raise NotImplementedError
