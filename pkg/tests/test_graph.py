"""Spatio-temporal graph convolution block and network head."""

import numpy as np
import pytest

from cinet.conv import TemporalConv
from cinet.graph import GlobalAverageHead, SkeletonGraph, StGcnBlock, graph_conv
from cinet.norm import BatchNorm
from cinet.containers import Sequential
from cinet.tensor import Tensor

from conftest import max_rel_dev, rand_tensor


def identity_bn(c):
    return BatchNorm(Tensor.wrap(np.ones(c, dtype=np.float32)), Tensor.zeros((c,)),
                     Tensor.zeros((c,)), Tensor.wrap(np.ones(c, dtype=np.float32)),
                     eps=1e-12)


def make_block(rng, v=25, c_in=4, c_out=4, k_t=9, stride=1, padding=0,
               partitions=3, residual=None, bn=None, scale=0.3):
    graph = SkeletonGraph.chain(v, partitions=partitions)
    w_gc = [rand_tensor(rng, (c_in, c_out), scale=scale) for _ in range(partitions)]
    tc = TemporalConv(rand_tensor(rng, (c_out, c_out, k_t, 1, 1), scale=scale),
                      rand_tensor(rng, (c_out,), scale=scale),
                      padding=padding, temporal_stride=stride)
    if residual is None:
        residual = "identity" if c_in == c_out else "pointwise"
    res_w = rand_tensor(rng, (c_in, c_out), scale=scale) if residual == "pointwise" else None
    return StGcnBlock(graph, w_gc, tc, bn or identity_bn(c_out),
                      residual=residual, res_weight=res_w)


# -- graph convolution ------------------------------------------------------------


def test_gc_identity_graph_and_weights():
    v = 4
    graph = SkeletonGraph([Tensor.wrap(np.eye(v))])
    w = [Tensor.wrap(np.eye(3, dtype=np.float32))]
    x = rand_tensor(np.random.default_rng(0), (3, v))
    assert np.allclose(graph_conv(x, graph, w).array, x.array, atol=1e-6)


def test_gc_symmetric_two_node_average():
    graph = SkeletonGraph([Tensor([[0.5, 0.5], [0.5, 0.5]], dtype="f64")])
    w = [Tensor.wrap(np.eye(1, dtype=np.float32))]
    out = graph_conv(Tensor([[1.0, 3.0]]), graph, w)
    assert np.allclose(out.array, [[2.0, 2.0]])


def test_gc_vs_dense_matmul_oracle():
    rng = np.random.default_rng(1)
    v, c_in, c_out, p = 6, 3, 5, 2
    mats = [rand_tensor(rng, (v, v)) for _ in range(p)]
    graph = SkeletonGraph(mats)
    w = [rand_tensor(rng, (c_in, c_out)) for _ in range(p)]
    x = rand_tensor(rng, (c_in, v))
    got = graph_conv(x, graph, w).array
    want = np.zeros((c_out, v))
    for wp, ap in zip(w, mats):
        for o in range(c_out):
            for u in range(v):
                acc = 0.0
                for c in range(c_in):
                    for i in range(v):
                        acc += float(wp.array[c, o]) * float(x.array[c, i]) * float(ap.array[i, u])
                want[o, u] += acc
    assert np.allclose(got, want, rtol=1e-5, atol=1e-5)


def test_graph_normalization_is_symmetric():
    g = SkeletonGraph.chain(5, partitions=1)
    a = g.partitions[0].array
    assert np.allclose(a, a.T)
    # normalized adjacency of a path graph with self loops has rows <= 1
    assert a.max() <= 1.0 and a.min() >= 0.0


# -- block ---------------------------------------------------------------------------


def test_block_pointwise_collapse():
    # K_T=1 and identity-ish pieces: block reduces to ReLU(GC then channel mix)
    rng = np.random.default_rng(2)
    blk = make_block(rng, v=5, c_in=3, c_out=3, k_t=1, residual="none")
    state = blk.init_state()
    x = rand_tensor(rng, (3, 5))
    out = blk.forward_step(state, x)
    g = graph_conv(x, blk.graph, blk.w_gc)
    tc_w = blk.tc.weights.array[:, :, 0, 0, 0]
    want = np.maximum(tc_w @ g.array + blk.tc.bias.array[:, None], 0)
    assert np.allclose(out.array, want, rtol=1e-5, atol=1e-6)


def test_block_offline_equals_steps():
    rng = np.random.default_rng(3)
    blk = make_block(rng, v=25, c_in=4, c_out=6, k_t=5, residual="pointwise",
                     bn=BatchNorm(rand_tensor(rng, (6,)), rand_tensor(rng, (6,)),
                                  rand_tensor(rng, (6,)),
                                  Tensor.wrap(np.abs(rng.normal(size=6)).astype(np.float32) + 0.2)))
    x = rand_tensor(rng, (16, 4, 25))
    offline = blk.forward(x)
    online = blk.forward_steps(blk.init_state(), x)
    assert offline.shape == online.shape
    assert max_rel_dev(online.array, offline.array) < 1e-4


def test_block_zero_input_zero_output():
    rng = np.random.default_rng(4)
    blk = make_block(rng, v=6, c_in=3, c_out=3, k_t=3, residual="identity")
    # beta = 0 and bias = 0 so zero input stays zero through BN and ReLU
    blk.tc.bias = Tensor.zeros((3,))
    state = blk.init_state()
    for t in range(8):
        out = blk.forward_step(state, Tensor.zeros((3, 6)))
        if out is not None:
            assert np.allclose(out.array, 0.0, atol=1e-6)


def test_block_rejects_mismatched_res_delay():
    rng = np.random.default_rng(5)
    graph = SkeletonGraph.chain(4, partitions=1)
    w_gc = [rand_tensor(rng, (3, 3))]
    tc = TemporalConv(rand_tensor(rng, (3, 3, 5, 1, 1)), rand_tensor(rng, (3,)))
    with pytest.raises(ValueError):
        StGcnBlock(graph, w_gc, tc, identity_bn(3), residual="identity",
                   res_delay=tc.delay() + 1)
    blk = StGcnBlock(graph, w_gc, tc, identity_bn(3), residual="identity",
                     res_delay=tc.delay())
    assert blk.res_delay == tc.delay()


def test_three_block_network_equivalence():
    rng = np.random.default_rng(6)
    blocks = [make_block(rng, v=25, c_in=4, c_out=4) for _ in range(3)]
    net = Sequential(blocks)
    x = rand_tensor(rng, (64, 4, 25))
    offline = net.forward(x)
    online = net.forward_steps(net.init_state(), x)
    assert offline.shape == online.shape
    assert max_rel_dev(online.array, offline.array) < 1e-4


# -- network with head -------------------------------------------------------------


def make_network(rng, v=9, c=3, blocks=1, window=8, classes=5, stride=1):
    mods = [make_block(rng, v=v, c_in=c, c_out=c,
                       stride=stride if i == 1 else 1, k_t=3)
            for i in range(blocks)]
    head = GlobalAverageHead(window, rand_tensor(rng, (c, classes)),
                             rand_tensor(rng, (classes,)))
    return Sequential(mods + [head])


def test_network_first_logit_matches_offline():
    rng = np.random.default_rng(7)
    net = make_network(rng, blocks=1, window=8)
    t_total = net.warmup() + 1
    x = rand_tensor(rng, (t_total, 3, 9))
    offline = net.forward(x)
    state = net.init_state()
    first = None
    for t in range(t_total):
        out = net.forward_step(state, Tensor.wrap(x.array[t]))
        if out is not None:
            first = out
            break
    assert offline.shape[0] == 1
    assert max_rel_dev(first.array, offline.array[0]) < 1e-4


def test_stride_two_halves_emission_rate():
    rng = np.random.default_rng(8)
    net = make_network(rng, blocks=3, window=4, stride=2)
    assert net.stride() == 2
    x_short = rand_tensor(rng, (40, 3, 9))
    x_long = Tensor.wrap(np.concatenate([x_short.array] * 2))
    short = net.forward_steps(net.init_state(), x_short).shape[0]
    long = net.forward_steps(net.init_state(), x_long).shape[0]
    # past warm-up, 40 extra input steps yield 20 extra emissions
    assert long - short == 20


def test_head_rejects_wrong_channels():
    rng = np.random.default_rng(9)
    head = GlobalAverageHead(4, rand_tensor(rng, (3, 2)), rand_tensor(rng, (2,)))
    with pytest.raises(Exception):
        head.out_frame_shape((5, 9))
