"""Model configs: JSON schema validation, deterministic build, weight init.

A config is a JSON object::

    {"name": ..., "dtype": "f32"|"f64",
     "input": {"shape": [...]},            # frame shape entering the stack
     "layers": [ {...}, ... ]}

Layer entries (defaults in parentheses):

- conv3d:           c_in, c_out, kernel [KT,KH,KW], dilation(1), padding(0),
                    stride(1), form("auto"), init
- avgpool_t:        window, padding(0)
- maxpool_t:        window
- batchnorm:        channels, eps(1e-5), init
- layernorm:        d, eps(1e-5), init
- co_encoder_block: mode, n, d_model, heads(1), ff_dim, rpe_period(n), init
- stgcn_block:      v, partitions(1), c_in, c_out, tc_kernel, tc_stride(1),
                    tc_padding(0), residual("auto"), init
- head:             pool_window, classes, init   (channels inferred upstream)
- sequential:       layers
- residual:         inner, shortcut("identity"|"pointwise"), init
- parallel:         branches, reduce("sum")

``init`` is ``{"scheme": "uniform", "seed": s, "lo": a, "hi": b}``,
``{"scheme": "constant", "value": c}`` or ``{"scheme": "blob", "path": p,
"offset": o}`` (consecutive little-endian f32 tensors read in field order).
Each layer draws its tensors from its own generator stream in a fixed,
documented field order (weights before biases, query/key/value/output
projections, then feed-forward, norm and encoding tables), so identical
configs always rebuild bit-identical weights.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attention import EncoderBlock, MultiheadAttention, RecyclingPositionalEncoding
from .containers import Identity, Parallel, Pointwise, Residual, Sequential
from .conv import TemporalConv
from .errors import ConfigError
from .graph import GlobalAverageHead, SkeletonGraph, StGcnBlock
from .module import CoModule
from .norm import BatchNorm, LayerNorm
from .pool import TemporalPool
from .rng import Xoshiro256pp
from .tensor import Tensor, load_blob


def canonical_json(cfg: dict) -> str:
    """Stable serialization; identical configs dump byte-identically."""
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"not valid JSON: {e}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("$", "config must be a JSON object")
    for field in ("name", "layers"):
        if field not in cfg:
            raise ConfigError(field, "missing required field")
    dtype = cfg.get("dtype", "f32")
    if dtype not in ("f32", "f64"):
        raise ConfigError("dtype", f"must be f32 or f64, got {dtype!r}")
    shape = cfg.get("input", {}).get("shape")
    if shape is not None and (
        not isinstance(shape, list) or any(not isinstance(e, int) or e < 0 for e in shape)
    ):
        raise ConfigError("input.shape", "must be a list of nonnegative ints")
    _validate_layers(cfg["layers"], "layers")


_REQUIRED = {
    "conv3d": ("c_in", "c_out", "kernel"),
    "avgpool_t": ("window",),
    "maxpool_t": ("window",),
    "batchnorm": ("channels",),
    "layernorm": ("d",),
    "co_encoder_block": ("mode", "n", "d_model", "ff_dim"),
    "stgcn_block": ("v", "c_in", "c_out", "tc_kernel"),
    "head": ("pool_window", "classes"),
    "sequential": ("layers",),
    "residual": ("inner",),
    "parallel": ("branches",),
}


def _validate_layers(layers, path: str) -> None:
    if not isinstance(layers, list) or not layers:
        raise ConfigError(path, "must be a non-empty list")
    for i, entry in enumerate(layers):
        _validate_entry(entry, f"{path}[{i}]")


def _validate_entry(entry, path: str) -> None:
    if not isinstance(entry, dict) or "type" not in entry:
        raise ConfigError(path, "layer entry must be an object with a 'type'")
    kind = entry["type"]
    if kind not in _REQUIRED:
        raise ConfigError(f"{path}.type", f"unknown layer type {kind!r}")
    for field in _REQUIRED[kind]:
        if field not in entry:
            raise ConfigError(f"{path}.{field}", f"missing required field for {kind}")
    if kind == "sequential":
        _validate_layers(entry["layers"], f"{path}.layers")
    elif kind == "parallel":
        _validate_layers(entry["branches"], f"{path}.branches")
    elif kind == "residual":
        _validate_entry(entry["inner"], f"{path}.inner")
    init = entry.get("init")
    if init is not None:
        scheme = init.get("scheme")
        if scheme not in ("uniform", "constant", "blob"):
            raise ConfigError(f"{path}.init.scheme", f"unknown scheme {scheme!r}")
        if scheme == "uniform" and "seed" not in init:
            raise ConfigError(f"{path}.init.seed", "uniform init needs a seed")
        if scheme == "constant" and "value" not in init:
            raise ConfigError(f"{path}.init.value", "constant init needs a value")
        if scheme == "blob" and "path" not in init:
            raise ConfigError(f"{path}.init.path", "blob init needs a path")


class _Init:
    """Draws a layer's tensors in declaration order from one source."""

    def __init__(self, spec: dict | None, dtype: str, base_dir: Path, path: str):
        spec = spec or {"scheme": "uniform", "seed": 0}
        self.scheme = spec["scheme"]
        self.dtype = dtype
        self.path = path
        if self.scheme == "uniform":
            self.rng = Xoshiro256pp(int(spec["seed"]))
            self.lo = float(spec.get("lo", -0.5))
            self.hi = float(spec.get("hi", 0.5))
        elif self.scheme == "constant":
            self.value = float(spec["value"])
        else:
            self.blob_path = base_dir / spec["path"]
            self.offset = int(spec.get("offset", 0))

    def draw(self, shape: tuple) -> Tensor:
        n = int(np.prod(shape)) if shape else 1
        if self.scheme == "uniform":
            return Tensor(self.rng.uniform(n, self.lo, self.hi), shape, self.dtype)
        if self.scheme == "constant":
            return Tensor.full(shape, self.value, self.dtype)
        t = load_blob(self.blob_path, shape, self.offset, self.dtype)
        self.offset += n
        return t

    def positive(self, shape: tuple, lo: float = 0.5, hi: float = 1.5) -> Tensor:
        """Strictly positive draw (running variances)."""
        if self.scheme == "uniform":
            n = int(np.prod(shape))
            return Tensor(self.rng.uniform(n, lo, hi), shape, self.dtype)
        if self.scheme == "constant":
            return Tensor.full(shape, 1.0, self.dtype)
        return self.draw(shape)


def build_model(cfg: dict, base_dir=".") -> Sequential:
    """Build the model tree; the top level is always a Sequential."""
    validate_config(cfg)
    dtype = cfg.get("dtype", "f32")
    base = Path(base_dir)
    frame = tuple(cfg.get("input", {}).get("shape", ()))
    modules, _ = _build_layers(cfg["layers"], "layers", dtype, base, frame)
    return Sequential(modules)


def _build_layers(entries, path, dtype, base, frame):
    modules = []
    for i, entry in enumerate(entries):
        m = _build_entry(entry, f"{path}[{i}]", dtype, base, frame)
        modules.append(m)
        frame = _advance(m, frame, f"{path}[{i}]")
    return modules, frame


def _advance(module: CoModule, frame, path):
    if not frame:
        return frame
    try:
        return module.out_frame_shape(frame)
    except Exception as e:
        raise ConfigError(path, f"frame shape {frame} rejected: {e}") from e


def _build_entry(entry: dict, path: str, dtype: str, base: Path, frame) -> CoModule:
    kind = entry["type"]
    init = _Init(entry.get("init"), dtype, base, path)
    try:
        if kind == "conv3d":
            kt, kh, kw = entry["kernel"]
            w = init.draw((entry["c_out"], entry["c_in"], kt, kh, kw))
            b = init.draw((entry["c_out"],))
            return TemporalConv(
                w, b,
                dilation=entry.get("dilation", 1),
                padding=entry.get("padding", 0),
                temporal_stride=entry.get("stride", 1),
                form=entry.get("form", "auto"),
            )
        if kind == "avgpool_t":
            return TemporalPool("avg", entry["window"], entry.get("padding", 0))
        if kind == "maxpool_t":
            return TemporalPool("max", entry["window"])
        if kind == "batchnorm":
            c = entry["channels"]
            return BatchNorm(
                gamma=init.draw((c,)),
                beta=init.draw((c,)),
                running_mean=init.draw((c,)),
                running_var=init.positive((c,)),
                eps=entry.get("eps", 1e-5),
            )
        if kind == "layernorm":
            d = entry["d"]
            return LayerNorm(init.draw((d,)), init.draw((d,)), entry.get("eps", 1e-5))
        if kind == "co_encoder_block":
            return _build_encoder(entry, init, frame)
        if kind == "stgcn_block":
            return _build_stgcn(entry, init, dtype)
        if kind == "head":
            if not frame:
                raise ValueError("head needs an input shape to infer channels")
            channels = frame[0]
            w = init.draw((channels, entry["classes"]))
            b = init.draw((entry["classes"],))
            return GlobalAverageHead(entry["pool_window"], w, b)
        if kind == "sequential":
            mods, _ = _build_layers(entry["layers"], f"{path}.layers", dtype, base, frame)
            return Sequential(mods)
        if kind == "residual":
            inner = _build_entry(entry["inner"], f"{path}.inner", dtype, base, frame)
            shortcut_kind = entry.get("shortcut", "identity")
            if shortcut_kind == "identity":
                shortcut = Identity()
            elif shortcut_kind == "pointwise":
                if not frame:
                    raise ValueError("pointwise shortcut needs an input shape")
                c_in = frame[0]
                c_out = inner.out_frame_shape(frame)[0]
                shortcut = Pointwise(init.draw((c_in, c_out)))
            else:
                raise ValueError(f"unknown shortcut {shortcut_kind!r}")
            return Residual(inner, shortcut)
        if kind == "parallel":
            branches = [
                _build_entry(b, f"{path}.branches[{j}]", dtype, base, frame)
                for j, b in enumerate(entry["branches"])
            ]
            return Parallel(branches, entry.get("reduce", "sum"))
    except ConfigError:
        raise
    except (ValueError, KeyError) as e:
        raise ConfigError(path, str(e)) from e
    raise ConfigError(path, f"unknown layer type {kind!r}")


def _build_encoder(entry: dict, init: _Init, frame) -> EncoderBlock:
    mode = entry["mode"]
    if mode not in ("retro", "single"):
        raise ValueError(f"mode must be 'retro' or 'single', got {mode!r}")
    n = entry["n"]
    d = entry["d_model"]
    heads = entry.get("heads", 1)
    ff = entry["ff_dim"]
    w_q = init.draw((d, d))
    w_k = init.draw((d, d))
    w_v = init.draw((d, d))
    w_o = init.draw((d, d))
    ff_w1 = init.draw((d, ff))
    ff_b1 = init.draw((ff,))
    ff_w2 = init.draw((ff, d))
    ff_b2 = init.draw((d,))
    ln1 = LayerNorm(init.draw((d,)), init.draw((d,)))
    ln2 = LayerNorm(init.draw((d,)), init.draw((d,)))
    period = entry.get("rpe_period", n)
    rpe = RecyclingPositionalEncoding(init.draw((period, d))) if period else None
    mha = MultiheadAttention(mode, n, w_q, w_k, w_v, w_o, heads=heads,
                             refresh_interval=entry.get("refresh_interval", 64))
    # a single-output block directly after a retroactive one consumes that
    # block's (n, d) window emissions and recomputes per window
    window_input = bool(frame) and len(frame) == 2 and frame == (n, d) and mode == "single"
    return EncoderBlock(mode, n, mha, ff_w1, ff_b1, ff_w2, ff_b2, ln1, ln2,
                        rpe=None if window_input else rpe,
                        window_input=window_input)


def _build_stgcn(entry: dict, init: _Init, dtype: str) -> StGcnBlock:
    v = entry["v"]
    parts = entry.get("partitions", 1)
    graph = SkeletonGraph.chain(v, partitions=parts, dtype=dtype)
    c_in, c_out = entry["c_in"], entry["c_out"]
    w_gc = [init.draw((c_in, c_out)) for _ in range(parts)]
    kt = entry["tc_kernel"]
    tc = TemporalConv(
        init.draw((c_out, c_out, kt, 1, 1)),
        init.draw((c_out,)),
        padding=entry.get("tc_padding", 0),
        temporal_stride=entry.get("tc_stride", 1),
    )
    bn = BatchNorm(
        gamma=init.draw((c_out,)),
        beta=init.draw((c_out,)),
        running_mean=init.draw((c_out,)),
        running_var=init.positive((c_out,)),
    )
    residual = entry.get("residual", "auto")
    if residual == "auto":
        residual = "identity" if (c_in == c_out and entry.get("tc_stride", 1) == 1) else "pointwise"
    res_w = init.draw((c_in, c_out)) if residual == "pointwise" else None
    return StGcnBlock(graph, w_gc, tc, bn, residual=residual, res_weight=res_w)


def random_stream(seed: int, length: int, frame_shape: tuple, dtype: str) -> Tensor:
    """Deterministic input stream in [-1, 1) from the documented generator."""
    rng = Xoshiro256pp(seed)
    n = length * int(np.prod(frame_shape))
    flat = rng.uniform(n, -1.0, 1.0)
    return Tensor(flat, (length,) + tuple(frame_shape), dtype)
