"""Feature map <-> sequence layouts.

A feature map is ``(..., d, H, W)``; a sequence is ``(..., L, d)`` with
``L = H * W``.
"""

from __future__ import annotations

import enum

import numpy as np

from .tensor import DimensionError


class ScanOrder(enum.Enum):
    ROWS = "rows"
    COLUMNS = "columns"
    ROWS_AND_COLUMNS = "rows_and_columns"

    @classmethod
    def parse(cls, text: str) -> "ScanOrder":
        key = text.strip().lower().replace("-", "_").replace("+", "_and_")
        aliases = {"row": "rows", "column": "columns", "cols": "columns", "both": "rows_and_columns"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown scan order {text!r}; expected one of "
                f"{', '.join(o.value for o in cls)}") from None

    def directions(self) -> tuple["ScanOrder", ...]:
        """Single-direction orders making up this order."""
        if self is ScanOrder.ROWS_AND_COLUMNS:
            return (ScanOrder.ROWS, ScanOrder.COLUMNS)
        return (self,)


def _check_map(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim < 3 or min(f.shape[-3:]) < 1:
        raise DimensionError(f"feature map must be (..., d, H, W) with extents >= 1, got {f.shape}")
    return f


def _unfold_one(f: np.ndarray, order: ScanOrder) -> np.ndarray:
    d, H, W = f.shape[-3:]
    if order is ScanOrder.ROWS:
        grid = f
    else:
        grid = np.swapaxes(f, -1, -2)
    return np.ascontiguousarray(np.swapaxes(grid.reshape(f.shape[:-3] + (d, H * W)), -1, -2))


def _fold_one(s: np.ndarray, d: int, H: int, W: int, order: ScanOrder) -> np.ndarray:
    chans = np.swapaxes(s, -1, -2)
    if order is ScanOrder.ROWS:
        return np.ascontiguousarray(chans.reshape(s.shape[:-2] + (d, H, W)))
    grid = chans.reshape(s.shape[:-2] + (d, W, H))
    return np.ascontiguousarray(np.swapaxes(grid, -1, -2))


def unfold(f: np.ndarray, order: ScanOrder = ScanOrder.ROWS):
    """Flatten a map into a sequence; ``ROWS_AND_COLUMNS`` returns a (rows, columns) pair."""
    f = _check_map(f)
    if order is ScanOrder.ROWS_AND_COLUMNS:
        return tuple(_unfold_one(f, o) for o in order.directions())
    return _unfold_one(f, order)


def fold(s, d: int, H: int, W: int, order: ScanOrder = ScanOrder.ROWS) -> np.ndarray:
    """Inverse of :func:`unfold`. For ``ROWS_AND_COLUMNS`` the two folded maps are averaged."""
    if order is ScanOrder.ROWS_AND_COLUMNS:
        if not isinstance(s, (tuple, list)) or len(s) != 2:
            raise DimensionError("rows_and_columns fold needs a (rows, columns) pair of sequences")
        maps = [fold(part, d, H, W, o) for part, o in zip(s, order.directions())]
        return (maps[0] + maps[1]) / 2.0
    s = np.asarray(s, dtype=np.float64)
    if s.ndim < 2 or s.shape[-2] != H * W or s.shape[-1] != d:
        raise DimensionError(f"sequence of shape {s.shape} cannot fold into {d}x{H}x{W}")
    return _fold_one(s, d, H, W, order)


def reverse(s: np.ndarray) -> np.ndarray:
    """Reverse the time axis of a (..., L, d) sequence."""
    s = np.asarray(s, dtype=np.float64)
    return np.ascontiguousarray(s[..., ::-1, :])
