"""Difference-driven attention between whole-frame and per-object predictions.

The gate is built from the absolute difference of aligned feature matrices:
softmax over each row of the negated, f-scaled differences, then an explicit
row normalization (a no-op on already stochastic rows, kept for fidelity).
The whole-frame/per-object blend multiplies the frame by the gate and the
summed, pasted per-object maps by its complement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataValidationError, DegenerateAttentionError, ShapeError
from .grids import (AttentionMap, LogitMap, bilinear_resize, gated_blend,
                    softmax_rows)
from .masks import BBox, _check_in_bounds


@dataclass(frozen=True)
class AttentionConfig:
    """Sharpness factor for the difference softmax; larger is peakier."""

    f: float = 1.0

    def __post_init__(self) -> None:
        if not (self.f > 0):
            raise DataValidationError(f"attention factor must be positive, got {self.f}")


def difference_matrix(global_feat, local_feat) -> np.ndarray:
    """Entrywise absolute difference of two aligned feature matrices."""
    g = np.asarray(global_feat, dtype=np.float64)
    l = np.asarray(local_feat, dtype=np.float64)
    if g.shape != l.shape:
        raise ShapeError(f"feature shapes {g.shape} vs {l.shape} mismatch")
    if g.ndim != 2:
        raise ShapeError(f"expected 2D matrices, got ndim={g.ndim}")
    if not (np.isfinite(g).all() and np.isfinite(l).all()):
        raise DataValidationError("feature matrices must be finite")
    return np.abs(g - l)


def local_attention(d: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    """Row-stochastic attention from a difference matrix: softmax of -f*d."""
    a = np.asarray(d, dtype=np.float64)
    if a.size and a.min() < 0:
        raise DataValidationError("difference matrix entries must be nonnegative")
    return softmax_rows(-cfg.f * a)


def row_normalize(a) -> np.ndarray:
    """Divide each row by its sum (ascending-order accumulation)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected 2D matrix, got ndim={m.ndim}")
    if m.size and m.min() < 0:
        raise DataValidationError("attention entries must be nonnegative")
    sums = np.cumsum(m, axis=1)[:, -1:]
    if (sums == 0).any():
        raise DegenerateAttentionError("cannot normalize an all-zero attention row")
    return m / sums


def attention_to_map(patches: Sequence[tuple[np.ndarray, BBox]], height: int,
                     width: int, neutral: float = 0.5) -> AttentionMap:
    """Assemble per-region attention values into one full-frame gate.

    Each patch matrix is read as a spatial grid, bilinearly resized to its
    region's pixel extent, and placed there; pixels outside every region get
    the neutral value.  Later patches overwrite earlier ones where regions
    overlap.
    """
    if not (0.0 <= neutral <= 1.0):
        raise DataValidationError(f"neutral attention {neutral} outside [0, 1]")
    canvas = np.full((height, width), neutral, dtype=np.float32)
    for matrix, region in patches:
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"attention patch must be 2D, got ndim={m.ndim}")
        if m.size == 0:
            raise ShapeError("attention patch cannot be empty")
        if not np.isfinite(m).all():
            raise DataValidationError("attention patch must be finite")
        if m.min() < 0.0 or m.max() > 1.0:
            raise DataValidationError("attention patch values must lie in [0, 1]")
        _check_in_bounds(region, height, width)
        patch = m.astype(np.float32)
        if (region.height, region.width) != m.shape:
            resized = bilinear_resize(
                LogitMap.from_array(patch), region.height, region.width)
            patch = resized.data[:, :, 0]
            # lerp can overshoot by one ulp; the gate must stay in [0, 1]
            patch = np.minimum(np.maximum(patch, np.float32(0.0)), np.float32(1.0))
        canvas[region.y0:region.y1, region.x0:region.x1] = patch
    return AttentionMap(height, width, canvas)


def fuse_global_local(global_logits: LogitMap,
                      local_logits: Sequence[tuple[LogitMap, BBox]],
                      beta: AttentionMap) -> LogitMap:
    """Blend whole-frame logits with summed per-object logits under ``beta``.

    Each local map is pasted into a zero frame at its box; the pasted maps
    are summed in the given order, and the output is
    ``global * beta + local_sum * (1 - beta)`` with the exact-envelope clamp
    of :func:`segfuse.grids.gated_blend`.
    """
    if (global_logits.height, global_logits.width) != (beta.height, beta.width):
        raise ShapeError(
            f"frame {global_logits.shape[:2]} vs gate {beta.shape} mismatch")
    local_sum = np.zeros_like(global_logits.data)
    for patch, box in local_logits:
        _check_in_bounds(box, global_logits.height, global_logits.width)
        if (patch.height, patch.width) != (box.height, box.width):
            raise ShapeError(
                f"local patch {patch.shape[:2]} does not fit box "
                f"{(box.height, box.width)}")
        if patch.channels != global_logits.channels:
            raise ShapeError(
                f"local channels {patch.channels} != frame channels "
                f"{global_logits.channels}")
        local_sum[box.y0:box.y1, box.x0:box.x1, :] += patch.data
    out = gated_blend(global_logits.data, local_sum, beta.data)
    return LogitMap(global_logits.height, global_logits.width,
                    global_logits.channels, out)
