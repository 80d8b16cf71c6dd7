"""Dense row-major tensors and the small set of operations the layers need.

Tensors are immutable after construction and all operations are pure, so
values can be shared freely between streams and threads.  Two element types
are supported, ``f32`` and ``f64``; the attention layers rely on ``f64``
being available for their internal accumulators.

Convolution here follows the cross-correlation convention (no kernel flip),
matching mainstream deep-learning semantics.  Broadcasting is deliberately
limited to scalar-with-tensor and equal shapes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DimensionError

DTYPES = {"f32": np.float32, "f64": np.float64}
_NP_TO_NAME = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

Scalar = Union[int, float]


class Tensor:
    """Immutable dense n-dimensional array with dtype ``f32`` or ``f64``.

    ``data`` is the row-major flat element sequence; ``len(data)`` always
    equals the product of ``shape``.  Rank 0 (scalars) is allowed.
    """

    __slots__ = ("array",)

    def __init__(self, data, shape: Sequence[int] | None = None, dtype: str = "f32"):
        if dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}")
        arr = np.asarray(data, dtype=DTYPES[dtype])
        if shape is not None:
            if any(int(e) < 0 for e in shape):
                raise DimensionError(f"negative extent in shape {tuple(shape)}")
            expected = int(np.prod(shape)) if len(shape) else 1
            if arr.size != expected:
                raise DimensionError(
                    f"{arr.size} elements cannot fill shape {tuple(shape)}"
                )
            arr = arr.reshape(tuple(int(e) for e in shape))
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "array", arr)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def wrap(arr: np.ndarray) -> "Tensor":
        """Adopt an ndarray (copied only if not f32/f64 contiguous)."""
        if arr.dtype not in (np.float32, np.float64):
            raise ValueError(f"unsupported ndarray dtype {arr.dtype}")
        t = object.__new__(Tensor)
        a = np.ascontiguousarray(arr)
        if a is arr and arr.flags.writeable:
            a = arr.copy()
        a.flags.writeable = False
        object.__setattr__(t, "array", a)
        return t

    @staticmethod
    def zeros(shape: Sequence[int], dtype: str = "f32") -> "Tensor":
        return Tensor.wrap(np.zeros(tuple(shape), dtype=DTYPES[dtype]))

    @staticmethod
    def full(shape: Sequence[int], value: Scalar, dtype: str = "f32") -> "Tensor":
        return Tensor.wrap(np.full(tuple(shape), value, dtype=DTYPES[dtype]))

    # -- basic fields --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.array.shape

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def dtype(self) -> str:
        return _NP_TO_NAME[self.array.dtype]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat element sequence (read-only view)."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        return float(self.array.reshape(-1)[0])

    def astype(self, dtype: str) -> "Tensor":
        if dtype == self.dtype:
            return self
        return Tensor.wrap(self.array.astype(DTYPES[dtype]))

    def tolist(self):
        return self.array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and self.dtype == other.dtype
            and bool(np.array_equal(self.array, other.array))
        )

    def __hash__(self):
        return hash((self.shape, self.dtype, self.array.tobytes()))


def _same_dtype(*ts: Tensor) -> str:
    dts = {t.dtype for t in ts}
    if len(dts) != 1:
        raise DimensionError(f"mixed dtypes {sorted(dts)}")
    return dts.pop()


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Row-major matrix product of an (m, k) and a (k, n) tensor."""
    if a.rank != 2 or b.rank != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    _same_dtype(a, b)
    return Tensor.wrap(a.array @ b.array)


def conv_spatial(x: Tensor, w: Tensor, pad: tuple = (0, 0)) -> Tensor:
    """2-D cross-correlation with zero padding and stride 1.

    ``x`` is (C_in, H, W), ``w`` is (C_out, C_in, K_H, K_W); the output is
    (C_out, H + 2*pad_h - K_H + 1, W + 2*pad_w - K_W + 1).
    """
    if x.rank != 3 or w.rank != 4:
        raise DimensionError(f"expected (C,H,W) x (O,C,KH,KW), got {x.shape} x {w.shape}")
    c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"channel mismatch: input {c_in}, kernel {c_in_w}")
    _same_dtype(x, w)
    ph, pw = int(pad[0]), int(pad[1])
    hp, wp = h + 2 * ph, wd + 2 * pw
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kh},{kw}) larger than padded input ({hp},{wp})"
        )
    xa = x.array
    if ph or pw:
        xa = np.pad(xa, ((0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xa, (kh, kw), axis=(1, 2))
    out = np.einsum("cijab,ocab->oij", windows, w.array, optimize=True)
    return Tensor.wrap(out.astype(x.array.dtype, copy=False))


# -- elementwise and reductions --------------------------------------------

_UNARY = {
    "exp": np.exp,
    "relu": lambda a: np.maximum(a, 0),
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, *args) -> Tensor:
    """Apply ``add``/``sub``/``mul``/``exp``/``relu``/``scale`` elementwise.

    Binary ops accept two equal-shape tensors or a tensor and a scalar;
    ``scale`` takes a tensor and a scalar factor.
    """
    if op in _UNARY:
        (x,) = args
        return Tensor.wrap(_UNARY[op](x.array))
    if op == "scale":
        x, factor = args
        return Tensor.wrap(x.array * x.array.dtype.type(factor))
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    a, b = args
    if isinstance(b, (int, float)):
        return Tensor.wrap(_BINARY[op](a.array, a.array.dtype.type(b)))
    if isinstance(a, (int, float)):
        return Tensor.wrap(_BINARY[op](b.array.dtype.type(a), b.array))
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    return Tensor.wrap(_BINARY[op](a.array, b.array))


def reduce(op: str, x: Tensor, axis: int) -> Tensor:
    """Reduce one axis with ``sum``, ``mean`` or ``max``; the axis is removed."""
    if not 0 <= axis < x.rank:
        raise DimensionError(f"axis {axis} out of range for rank {x.rank}")
    fn = {"sum": np.sum, "mean": np.mean, "max": np.max}.get(op)
    if fn is None:
        raise ValueError(f"unknown reduce op {op!r}")
    return Tensor.wrap(fn(x.array, axis=axis).astype(x.array.dtype, copy=False))


# -- shape plumbing ---------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    expected = int(np.prod(shape)) if len(shape) else 1
    if expected != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}")
    return Tensor.wrap(x.array.reshape(tuple(shape)))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    return Tensor.wrap(np.ascontiguousarray(np.transpose(x.array, axes)))


def concat(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    if not ts:
        raise DimensionError("concat of zero tensors")
    _same_dtype(*ts)
    return Tensor.wrap(np.concatenate([t.array for t in ts], axis=axis))


def tslice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= axis < x.rank:
        raise DimensionError(f"axis {axis} out of range for rank {x.rank}")
    idx = [slice(None)] * x.rank
    idx[axis] = slice(start, stop)
    return Tensor.wrap(np.ascontiguousarray(x.array[tuple(idx)]))


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not ts:
        raise DimensionError("stack of zero tensors")
    _same_dtype(*ts)
    return Tensor.wrap(np.stack([t.array for t in ts], axis=axis))


# -- weight blob I/O ---------------------------------------------------------
# Blob format: little-endian IEEE-754 f32 flat array. Shapes live in the JSON
# manifest next to it, not in the blob.


def save_blob(path, tensors: Sequence[Tensor]) -> dict:
    """Write tensors as one concatenated little-endian f32 blob.

    Returns the manifest dict mapping entry index to shape and offset
    (offsets count f32 elements, not bytes).
    """
    path = Path(path)
    manifest = {"format": "f32-le", "entries": []}
    offset = 0
    with open(path, "wb") as fh:
        for t in tensors:
            flat = t.array.astype("<f4").reshape(-1)
            fh.write(flat.tobytes())
            manifest["entries"].append({"shape": list(t.shape), "offset": offset})
            offset += flat.size
    return manifest


def load_blob(path, shape: Sequence[int], offset: int = 0, dtype: str = "f32") -> Tensor:
    """Read one tensor from a little-endian f32 blob at an element offset."""
    count = int(np.prod(shape)) if len(shape) else 1
    raw = np.fromfile(path, dtype="<f4", count=count, offset=offset * 4)
    if raw.size != count:
        raise DimensionError(
            f"blob {path} too short: wanted {count} f32 at offset {offset}"
        )
    return Tensor.wrap(raw.astype(DTYPES[dtype]).reshape(tuple(shape)))


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
