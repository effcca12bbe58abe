"""Dense float64 tensors with shape-checked arithmetic and SST1 file I/O.

``Tensor`` is an immutable row-major container. The array-level kernels
``contract`` and ``softplus`` are shared with the rest of the package so that
every contraction in the library sums in the same fixed order.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

SST1_MAGIC = b"SST1"
SOFTPLUS_LINEAR_ABOVE = 30.0


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract the last axis of ``a`` (..., k) with the first axis of ``b`` (k, n).

    Accumulates left to right over k so results are bit-identical to a naive
    triple loop; no BLAS call is involved.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot contract shapes {a.shape} and {b.shape}")
    k = b.shape[0]
    out = np.zeros(a.shape[:-1] + (b.shape[1],))
    for i in range(k):
        out += a[..., i, None] * b[i]
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x), returning x itself above 30 where the correction is below 1e-13."""
    x = np.asarray(x, dtype=np.float64)
    small = np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_ABOVE)))
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, x, small)


class Tensor:
    """Immutable n-dimensional array of finite float64 values."""

    __slots__ = ("_a",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if any(s < 0 for s in shape):
                raise DimensionError(f"negative extent in shape {shape}")
            if arr.size != math.prod(shape):
                raise DimensionError(
                    f"{arr.size} values cannot fill shape {shape}")
            arr = arr.reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._a = arr

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape)))

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.ones(tuple(shape)))

    @classmethod
    def eye(cls, n: int) -> "Tensor":
        return cls(np.eye(n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def data(self) -> tuple[float, ...]:
        """Flat row-major values."""
        return tuple(self._a.ravel().tolist())

    @property
    def rank(self) -> int:
        return self._a.ndim

    def numpy(self) -> np.ndarray:
        return self._a.copy()

    def tolist(self):
        return self._a.tolist()

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return Tensor(self._a, shape)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._a.copy()
        return self._a.astype(dtype)

    def __len__(self) -> int:
        return self._a.shape[0] if self._a.ndim else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self._a.tolist()!r})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _arr(x) -> np.ndarray:
    return x._a if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_arr, b_arr = _arr(a), _arr(b)
    if a_arr.ndim != 2 or b_arr.ndim != 2 or a_arr.shape[1] != b_arr.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a_arr.shape} x {b_arr.shape}")
    return Tensor(contract(a_arr, b_arr))


def map_unary(x: Tensor, fn: str, c: float | None = None) -> Tensor:
    """Apply ``exp``, ``softplus``, ``neg`` or ``scale`` (by ``c``) elementwise."""
    a = _arr(x)
    if fn == "exp":
        out = np.exp(a)
    elif fn == "softplus":
        out = softplus(a)
    elif fn == "neg":
        out = -a
    elif fn == "scale":
        if c is None:
            raise ValueError("scale needs a factor c")
        out = a * float(c)
    else:
        raise ValueError(f"unknown unary map {fn!r}")
    return Tensor(out)


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a_arr, b_arr = _arr(a), _arr(b)
    _same_shape(a_arr, b_arr, "add")
    return Tensor(a_arr + b_arr)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a_arr, b_arr = _arr(a), _arr(b)
    _same_shape(a_arr, b_arr, "mul")
    return Tensor(a_arr * b_arr)


# SST1: b"SST1", u32 rank, rank x u32 extents, then f64 payload; all little-endian.

def to_sst1_bytes(t) -> bytes:
    a = _arr(t)
    header = SST1_MAGIC + struct.pack("<I", a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f8").tobytes()


def from_sst1_bytes(buf: bytes) -> Tensor:
    if len(buf) < 8 or buf[:4] != SST1_MAGIC:
        raise ValueError("not an SST1 stream (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise ValueError("truncated SST1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    n = math.prod(shape)
    if len(buf) != off + 8 * n:
        raise ValueError(
            f"SST1 payload is {len(buf) - off} bytes, expected {8 * n} for shape {shape}")
    values = np.frombuffer(buf, dtype="<f8", count=n, offset=off)
    return Tensor(values, shape)


def write_sst1(path: str | Path, t) -> None:
    Path(path).write_bytes(to_sst1_bytes(t))


def read_sst1(path: str | Path) -> Tensor:
    return from_sst1_bytes(Path(path).read_bytes())

