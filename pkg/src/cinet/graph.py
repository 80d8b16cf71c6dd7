"""Continual spatio-temporal graph convolution over a fixed skeleton.

Each step applies a spatial graph convolution (stateless, per frame), then a
continual temporal convolution, batch normalization, a residual delayed to
land on the aligned time-step, and ReLU:

    out_t = ReLU( Delay(Res(x_t)) + BN(CoTC(GC(x_t))) )

The skeleton is a set of normalized adjacency partitions; each partition is
normalized symmetrically as ``D^-1/2 (A) D^-1/2`` at construction (with the
self-loop added before normalization for single-partition graphs).
"""

from __future__ import annotations

from collections import deque
from typing import List, Optional, Sequence

import numpy as np

from .conv import TemporalConv
from .errors import DimensionError
from .module import CoModule, OpCount, StepOutput
from .norm import BatchNorm
from .pool import TemporalPool
from .tensor import Tensor


def _sym_normalize(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[:, None] * a * inv[None, :]


class SkeletonGraph:
    """Fixed skeleton with one or more normalized adjacency partitions."""

    def __init__(self, partitions: Sequence[Tensor]):
        if not partitions:
            raise DimensionError("need at least one adjacency partition")
        v = partitions[0].shape[0]
        for p in partitions:
            if p.shape != (v, v):
                raise DimensionError(f"partition shape {p.shape} != ({v},{v})")
        self.v = v
        self.partitions = list(partitions)

    @staticmethod
    def from_edges(v: int, edges: Sequence[tuple], partitions: int = 1,
                   root: int = 0, dtype: str = "f64") -> "SkeletonGraph":
        """Build from undirected edges; 1 partition (normalized A+I) or the
        3-way split into self, centripetal and centrifugal neighbors."""
        a = np.zeros((v, v))
        for i, j in edges:
            a[i, j] = a[j, i] = 1.0
        if partitions == 1:
            mats = [_sym_normalize(a + np.eye(v))]
        elif partitions == 3:
            dist = _bfs_distance(a, root)
            toward = np.zeros_like(a)
            away = np.zeros_like(a)
            for i in range(v):
                for j in range(v):
                    if a[i, j] and dist[j] < dist[i]:
                        toward[i, j] = 1.0
                    elif a[i, j] and dist[j] > dist[i]:
                        away[i, j] = 1.0
            mats = [np.eye(v), _sym_normalize(toward), _sym_normalize(away)]
        else:
            raise ValueError(f"unsupported partition count {partitions}")
        return SkeletonGraph([Tensor(m, dtype=dtype) for m in mats])

    @staticmethod
    def chain(v: int, partitions: int = 1, dtype: str = "f64") -> "SkeletonGraph":
        """Simple path graph 0-1-...-(v-1); a deterministic test skeleton."""
        return SkeletonGraph.from_edges(
            v, [(i, i + 1) for i in range(v - 1)], partitions, dtype=dtype
        )


def _bfs_distance(a: np.ndarray, root: int) -> np.ndarray:
    v = a.shape[0]
    dist = np.full(v, np.inf)
    dist[root] = 0
    frontier = [root]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.nonzero(a[i])[0]:
                if dist[j] == np.inf:
                    dist[j] = dist[i] + 1
                    nxt.append(j)
        frontier = nxt
    return dist


def graph_conv(x_t: Tensor, graph: SkeletonGraph, w_gc: Sequence[Tensor]) -> Tensor:
    """Spatial graph convolution of one (c_in, v) frame.

    Sums ``W_p^T x A_p`` over partitions: channel mix, then neighborhood
    aggregation with the partition's normalized adjacency.
    """
    if x_t.rank != 2 or x_t.shape[1] != graph.v:
        raise DimensionError(f"frame must be (c_in, {graph.v}), got {x_t.shape}")
    if len(w_gc) != len(graph.partitions):
        raise DimensionError(
            f"{len(w_gc)} weight sets for {len(graph.partitions)} partitions"
        )
    dt = x_t.array.dtype
    out = None
    for w, a in zip(w_gc, graph.partitions):
        y = w.array.astype(dt).T @ x_t.array @ a.array.astype(dt)
        out = y if out is None else out + y
    return Tensor.wrap(out)


class _BlockState:
    __slots__ = ("tc", "res_q", "pushed")

    def __init__(self, tc_state):
        self.tc = tc_state
        self.res_q = deque()
        self.pushed = 0


class StGcnBlock(CoModule):
    def __init__(self, graph: SkeletonGraph, w_gc: Sequence[Tensor],
                 tc: TemporalConv, bn: BatchNorm,
                 residual: str = "identity", res_weight: Optional[Tensor] = None,
                 res_delay: Optional[int] = None):
        if tc.k_h != 1 or tc.k_w != 1:
            raise DimensionError("block temporal conv must be pointwise spatially")
        self.graph = graph
        self.w_gc = list(w_gc)
        self.c_in = w_gc[0].shape[0]
        self.c_out = w_gc[0].shape[1]
        for w in w_gc:
            if w.shape != (self.c_in, self.c_out):
                raise DimensionError(f"gc weight shape {w.shape}")
        if tc.c_in != self.c_out or tc.c_out != self.c_out:
            raise DimensionError(
                f"temporal conv is {tc.c_in}->{tc.c_out}, expected {self.c_out}->{self.c_out}"
            )
        if bn.channels != self.c_out:
            raise DimensionError(f"bn has {bn.channels} channels, block emits {self.c_out}")
        if residual not in ("none", "identity", "pointwise"):
            raise ValueError(f"unknown residual kind {residual!r}")
        if residual == "identity" and self.c_in != self.c_out:
            raise DimensionError("identity residual needs c_in == c_out")
        if residual == "pointwise":
            if res_weight is None or res_weight.shape != (self.c_in, self.c_out):
                raise DimensionError(f"pointwise residual needs ({self.c_in},{self.c_out}) weight")
        # the residual buffer must match the temporal conv delay exactly
        if res_delay is not None and res_delay != tc.delay():
            raise ValueError(
                f"res_delay {res_delay} != temporal conv delay {tc.delay()}"
            )
        self.tc = tc
        self.bn = bn
        self.residual = residual
        self.res_weight = res_weight
        self.res_delay = tc.delay()

    def delay(self) -> int:
        return self.tc.delay()

    def receptive_field(self) -> int:
        return self.tc.receptive_field()

    def stride(self) -> int:
        return self.tc.stride()

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        c, v = frame_shape
        if c != self.c_in or v != self.graph.v:
            raise DimensionError(f"frame {frame_shape} != ({self.c_in},{self.graph.v})")
        return (self.c_out, v)

    def children(self) -> List[CoModule]:
        return []

    def _res(self, xa: np.ndarray) -> np.ndarray:
        if self.residual == "pointwise":
            return self.res_weight.array.astype(xa.dtype).T @ xa
        return xa

    def init_state(self) -> _BlockState:
        return _BlockState(self.tc.init_state())

    def forward_step(self, state: _BlockState, x_t: Tensor) -> StepOutput:
        if x_t.shape != (self.c_in, self.graph.v):
            raise DimensionError(f"frame {x_t.shape} != ({self.c_in},{self.graph.v})")
        t = state.pushed
        if self.residual != "none":
            state.res_q.append(x_t.array)
        state.pushed += 1
        g = graph_conv(x_t, self.graph, self.w_gc)
        tc_out = self.tc.forward_step(
            state.tc, Tensor.wrap(g.array[:, :, None])
        )
        if tc_out is None:
            return None
        y = self.bn._apply(tc_out.array[:, :, 0], channel_axis=0)
        if self.residual != "none":
            target = t - self.res_delay
            while state.pushed - len(state.res_q) < target:
                state.res_q.popleft()  # inputs skipped by the stride
            # project lazily so strides never spend work on skipped frames
            y = y + self._res(state.res_q.popleft())
        return Tensor.wrap(np.maximum(y, 0))

    def forward(self, x: Tensor) -> Tensor:
        if x.rank != 3:
            raise DimensionError(f"clip must be (T, c_in, v), got {x.shape}")
        dt = x.array.dtype
        g = None
        for w, a in zip(self.w_gc, self.graph.partitions):
            y = np.einsum("io,tiv,vu->tou", w.array.astype(dt), x.array,
                          a.array.astype(dt), optimize=True)
            g = y if g is None else g + y
        tc_out = self.tc.forward(Tensor.wrap(g[:, :, :, None])).array[:, :, :, 0]
        y = self.bn._apply(tc_out, channel_axis=1)
        if self.residual != "none":
            idx = np.arange(y.shape[0]) * self.stride()
            res = np.stack([self._res(x.array[i]) for i in idx]) if len(idx) else \
                np.zeros_like(y)
            y = y + res
        return Tensor.wrap(np.maximum(y, 0))

    # -- analytic cost -------------------------------------------------------------

    def _gc_cost(self) -> OpCount:
        p = len(self.graph.partitions)
        v = self.graph.v
        macs = p * (self.c_in * self.c_out * v + self.c_out * v * v)
        return OpCount(macs=macs, other=(p - 1) * self.c_out * v)

    def _per_emission(self) -> OpCount:
        v = self.graph.v
        cost = self.tc._per_emission((self.c_out, v, 1))
        cost = cost + self.bn.step_cost((self.c_out, v))
        if self.residual == "pointwise":
            cost = cost + OpCount(macs=self.c_in * self.c_out * v)
        extra = (2 if self.residual != "none" else 1) * self.c_out * v  # add + relu
        return cost + OpCount(other=extra)

    def step_cost(self, frame_shape: tuple) -> OpCount:
        per = self._per_emission()
        if self.stride() > 1:
            per = per.scaled(1 / self.stride())
        return self._gc_cost() + per

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        return self._gc_cost().scaled(t) + self._per_emission().scaled(self.out_len(t))


class _HeadState:
    __slots__ = ("pool",)

    def __init__(self, pool_state):
        self.pool = pool_state


class GlobalAverageHead(CoModule):
    """Running global average over time and nodes, then a linear classifier."""

    def __init__(self, pool_window: int, weight: Tensor, bias: Tensor):
        self.pool = TemporalPool("avg", pool_window)
        self.channels, self.classes = weight.shape
        if bias.shape != (self.classes,):
            raise DimensionError(f"bias shape {bias.shape} != ({self.classes},)")
        self.weight = weight
        self.bias = bias

    def delay(self) -> int:
        return self.pool.delay()

    def receptive_field(self) -> int:
        return self.pool.window

    def out_frame_shape(self, frame_shape: tuple) -> tuple:
        if frame_shape[0] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {frame_shape[0]}")
        return (self.classes,)

    def init_state(self) -> _HeadState:
        return _HeadState(self.pool.init_state())

    def _classify(self, pooled: np.ndarray) -> np.ndarray:
        feat = pooled.reshape(self.channels, -1).mean(axis=1)
        dt = pooled.dtype
        return feat @ self.weight.array.astype(dt) + self.bias.array.astype(dt)

    def forward_step(self, state: _HeadState, x_t: Tensor) -> StepOutput:
        pooled = self.pool.forward_step(state.pool, x_t)
        if pooled is None:
            return None
        return Tensor.wrap(self._classify(pooled.array))

    def forward(self, x: Tensor) -> Tensor:
        pooled = self.pool.forward(x)
        outs = np.stack([self._classify(pooled.array[j]) for j in range(pooled.shape[0])]) \
            if pooled.shape[0] else np.zeros((0, self.classes), dtype=x.array.dtype)
        return Tensor.wrap(outs)

    def _classify_cost(self, frame_shape: tuple) -> OpCount:
        n = int(np.prod(frame_shape))
        macs = self.channels * self.classes
        other = (n - self.channels) + self.channels + self.classes  # node mean + bias
        return OpCount(macs=macs, other=other)

    def step_cost(self, frame_shape: tuple) -> OpCount:
        return self.pool.step_cost(frame_shape) + self._classify_cost(frame_shape)

    def clip_cost(self, frame_shape: tuple, t: int) -> OpCount:
        n_out = self.out_len(t)
        return self.pool.clip_cost(frame_shape, t) + self._classify_cost(frame_shape).scaled(n_out)
