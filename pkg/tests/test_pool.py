"""Temporal pooling: hand cases, window-recompute oracle, drift bounds."""

import numpy as np
import pytest

from cinet.errors import DimensionError
from cinet.pool import TemporalPool
from cinet.tensor import Tensor

from conftest import max_rel_dev, rand_tensor


def scalar_stream(values):
    return [Tensor(np.array([v], dtype=np.float32)) for v in values]


def window_oracle(kind, x, window, padding):
    """Recompute each output over its explicit (zero-prefixed) window."""
    xe = np.concatenate([np.zeros((padding,) + x.shape[1:]), x.astype(np.float64)])
    outs = []
    for end in range(window, xe.shape[0] + 1):
        win = xe[end - window : end]
        outs.append(win.mean(axis=0) if kind == "avg" else win.max(axis=0))
    return np.array(outs)


def test_avg_window4_hand_sums():
    pool = TemporalPool("avg", 4)
    state = pool.init_state()
    outs = [pool.forward_step(state, f) for f in scalar_stream([1, 2, 3, 4, 5])]
    ready = [float(o.array[0]) for o in outs if o is not None]
    assert ready == pytest.approx([2.5, 3.5])


def test_max_window3_hand_maxima():
    pool = TemporalPool("max", 3)
    state = pool.init_state()
    outs = [pool.forward_step(state, f) for f in scalar_stream([1, 3, 2, 5, 4])]
    ready = [float(o.array[0]) for o in outs if o is not None]
    assert ready == [3, 5, 5]


@pytest.mark.parametrize("kind,window,padding", [
    ("avg", 5, 0), ("avg", 5, 3), ("avg", 1, 0), ("max", 4, 0), ("max", 1, 0),
])
def test_step_vs_window_recompute_oracle(kind, window, padding):
    rng = np.random.default_rng(20 + window)
    pool = TemporalPool(kind, window, padding)
    x = rand_tensor(rng, (30, 2, 3))
    want = window_oracle(kind, x.array, window, padding)
    got = pool.forward_steps(pool.init_state(), x).array
    assert got.shape == want.shape
    if kind == "max":
        assert np.array_equal(got, want.astype(np.float32))
    else:
        assert np.allclose(got, want, rtol=1e-6, atol=1e-6)


def test_forward_window1_is_identity():
    x = rand_tensor(np.random.default_rng(3), (7, 2))
    for kind in ("avg", "max"):
        assert np.allclose(TemporalPool(kind, 1).forward(x).array, x.array)


def test_forward_matches_steps():
    rng = np.random.default_rng(4)
    for spec in (TemporalPool("avg", 6, 2), TemporalPool("max", 5)):
        x = rand_tensor(rng, (25, 3))
        offline = spec.forward(x)
        online = spec.forward_steps(spec.init_state(), x)
        assert offline.shape == online.shape
        assert max_rel_dev(online.array, offline.array) < 1e-6


def test_constant_input_avg_gives_constant():
    pool = TemporalPool("avg", 4)
    x = Tensor.full((10, 3), 2.25)
    out = pool.forward(x)
    assert np.allclose(out.array, 2.25)


def test_ready_count_law():
    for kind, window, padding in [("avg", 4, 0), ("avg", 4, 2), ("max", 3, 0)]:
        pool = TemporalPool(kind, window, padding)
        for t_in in (0, 2, window, 11):
            x = rand_tensor(np.random.default_rng(t_in), (t_in, 2))
            got = pool.forward_steps(pool.init_state(), x)
            assert got.shape[0] == max(0, t_in - (window - 1 - padding))


def test_max_rejects_padding():
    with pytest.raises(ValueError):
        TemporalPool("max", 3, padding=1)


def test_shape_drift_rejected():
    pool = TemporalPool("avg", 3)
    state = pool.init_state()
    pool.forward_step(state, Tensor.zeros((2, 2)))
    with pytest.raises(DimensionError):
        pool.forward_step(state, Tensor.zeros((3, 2)))


def test_running_sum_matches_window_contents():
    rng = np.random.default_rng(6)
    pool = TemporalPool("avg", 5, padding=2)
    state = pool.init_state()
    for t in range(40):
        pool.forward_step(state, rand_tensor(rng, (2,)))
        exact = sum((f.astype(np.float64) for f in state.dq), np.zeros(2))
        assert np.allclose(state.running_sum, exact, atol=1e-9)


def test_max_structure_bounded_by_window():
    rng = np.random.default_rng(7)
    pool = TemporalPool("max", 6)
    state = pool.init_state()
    for _ in range(50):
        pool.forward_step(state, rand_tensor(rng, (3,)))
        assert len(state.maxq) <= pool.window
        assert len(state.maxq.front_max) <= pool.window
        assert len(state.maxq.back_raw) <= pool.window


@pytest.mark.slow
def test_drift_bound_over_one_million_steps():
    window = 8
    rng = np.random.default_rng(8)
    data = rng.uniform(-1, 1, size=(10**6, 2)).astype(np.float32)
    for interval, bound in ((0, 1e-3), (4096, 1e-5)):
        pool = TemporalPool("avg", window, refresh_interval=interval)
        state = pool.init_state()
        worst = 0.0
        for t in range(data.shape[0]):
            pool.forward_step(state, Tensor.wrap(data[t]))
            if t % 5000 == 0 and t >= window:
                # after the post-emission subtraction the sum covers the
                # frames still cached for the next window
                exact = sum((f.astype(np.float64) for f in state.dq), np.zeros(2))
                worst = max(worst, float(np.abs(state.running_sum - exact).max()))
        assert worst <= bound, f"interval={interval}: drift {worst}"
