"""Dense grid types and the pixel-wise primitives everything else composes.

Numerical conventions, fixed here and treated as normative by the rest of
the package:

- Grid payloads are float32, row-major, channel-minor, immutable once
  constructed.  (float32 because the on-disk tensor format is float32 and
  the save/load roundtrip must be lossless.)
- Resampling uses half-pixel-center coordinates, ``src = (dst + 0.5) *
  in/out - 0.5``, with clamp-to-edge at the borders.  Interpolation is
  evaluated in float64 in lerp form, ``v0 + (v1 - v0) * t``, which is exact
  on constant grids, then rounded once to float32.
- Row reductions accumulate in ascending index order (via cumsum), not
  pairwise, so results are bit-reproducible run to run.
- Softmax subtracts the row maximum before exponentiating.
- Argmax ties resolve to the lowest channel index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, ShapeError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LogitMap:
    """An immutable height x width x channels grid of per-class scores."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise DataValidationError("LogitMap dimensions must be positive")
        # own a copy: freezing a caller's array in place would be a surprise
        arr = np.array(self.data, dtype=np.float32, order="C")
        expected = (self.height, self.width, self.channels)
        if arr.shape != expected:
            raise ShapeError(f"LogitMap data shape {arr.shape} != {expected}")
        if not np.isfinite(arr).all():
            raise DataValidationError("LogitMap contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_array(cls, arr) -> "LogitMap":
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ShapeError(f"expected 2D or 3D array, got ndim={a.ndim}")
        return cls(a.shape[0], a.shape[1], a.shape[2], a)

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "LogitMap":
        return cls(height, width, channels,
                   np.full((height, width, channels), value, dtype=np.float32))

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "LogitMap":
        return cls.full(height, width, channels, 0.0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class AttentionMap:
    """An immutable height x width grid of blend gates in [0, 1]."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DataValidationError("AttentionMap dimensions must be positive")
        arr = np.array(self.data, dtype=np.float32, order="C")
        if arr.shape != (self.height, self.width):
            raise ShapeError(
                f"AttentionMap data shape {arr.shape} != {(self.height, self.width)}")
        if not np.isfinite(arr).all():
            raise DataValidationError("AttentionMap contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DataValidationError("AttentionMap values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_array(cls, arr) -> "AttentionMap":
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim != 2:
            raise ShapeError(f"expected 2D array, got ndim={a.ndim}")
        return cls(a.shape[0], a.shape[1], a)

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "AttentionMap":
        return cls(height, width, np.full((height, width), value, dtype=np.float32))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def pixelwise_mul(a: LogitMap, w: AttentionMap) -> LogitMap:
    """Multiply every channel of ``a`` by the per-pixel gate ``w``."""
    if (a.height, a.width) != (w.height, w.width):
        raise ShapeError(f"grid {a.shape[:2]} vs gate {w.shape} mismatch")
    return LogitMap(a.height, a.width, a.channels, a.data * w.data[:, :, None])


def pixelwise_add(a: LogitMap, b: LogitMap) -> LogitMap:
    """Elementwise sum of two identically shaped grids."""
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes {a.shape} vs {b.shape} mismatch")
    return LogitMap(a.height, a.width, a.channels, a.data + b.data)


def complement(w: AttentionMap) -> AttentionMap:
    """The gate ``1 - w``; stays in [0, 1]."""
    return AttentionMap(w.height, w.width, np.float32(1.0) - w.data)


def bilinear_resize(a: LogitMap, out_h: int, out_w: int) -> LogitMap:
    """Per-channel bilinear resample to (out_h, out_w).

    Half-pixel-center mapping with clamp-to-edge; lerp form evaluated in
    float64, rounded once to float32.  A constant grid resamples to exactly
    that constant at every output pixel.
    """
    if out_h < 1 or out_w < 1:
        raise DataValidationError("output dimensions must be positive")
    src = a.data.astype(np.float64)

    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (a.height / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (a.width / out_w) - 0.5
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    dy = sy - y0
    dx = sx - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, a.height - 1)
    y1c = np.clip(y0 + 1, 0, a.height - 1)
    x0c = np.clip(x0, 0, a.width - 1)
    x1c = np.clip(x0 + 1, 0, a.width - 1)

    v00 = src[y0c[:, None], x0c[None, :], :]
    v01 = src[y0c[:, None], x1c[None, :], :]
    v10 = src[y1c[:, None], x0c[None, :], :]
    v11 = src[y1c[:, None], x1c[None, :], :]

    wx = dx[None, :, None]
    wy = dy[:, None, None]
    top = v00 + (v01 - v00) * wx
    bot = v10 + (v11 - v10) * wx
    out = top + (bot - top) * wy
    return LogitMap(out_h, out_w, a.channels, out.astype(np.float32))


def _row_sums(a: np.ndarray) -> np.ndarray:
    # cumsum accumulates left to right; its last column is the sequential sum
    return np.cumsum(a, axis=1)[:, -1:]


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax of a 2D float64 matrix, with row-max subtraction."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected 2D matrix, got ndim={a.ndim}")
    if a.shape[1] == 0:
        raise DataValidationError("softmax of an empty row is undefined")
    if not np.isfinite(a).all():
        raise DataValidationError("softmax input must be finite")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / _row_sums(e)


def argmax_channel(a: LogitMap) -> np.ndarray:
    """Per-pixel index of the highest-scoring channel (lowest index on ties)."""
    return np.argmax(a.data, axis=2).astype(np.int64)


def gated_blend(a: np.ndarray, b: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """``a * gate + b * (1 - gate)`` in float32, clamped per pixel to
    [min(a, b), max(a, b)].

    The clamp costs at most one float32 ulp and makes the convex-combination
    contract exact: gate == 1 returns ``a`` bitwise, gate == 0 returns ``b``
    bitwise, and the output never escapes the operand envelope.
    """
    g = gate if gate.ndim == a.ndim else gate[..., None]
    out = a * g + b * (np.float32(1.0) - g)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return np.minimum(np.maximum(out, lo), hi)


def scaled_dim(n: int, scale: float) -> int:
    """Grid size of an axis of length ``n`` rendered at ``scale`` (round half up)."""
    return max(1, int(math.floor(n * scale + 0.5)))
