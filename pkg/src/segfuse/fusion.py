"""Weighted mask and logit fusion across models.

Weights are normalized AP fractions, w_i = norm_ap_i / sum_j norm_ap_j.
All weighted sums accumulate in ascending model id order, starting from the
first model's term, and the result is clamped per pixel to the envelope of
its operands so the convex-combination contract holds exactly in floating
point (identical inputs fuse to themselves bitwise).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bundle import PredictionBundle
from .errors import DataValidationError, ShapeError
from .grids import LogitMap
from .masks import COMPONENTS, BinaryMask, MaskInstance
from .metrics import ApTable, normalize_ap

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class FusionWeights:
    """Per-model fusion coefficients for one group, ascending model id."""

    group_key: object
    weights: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.weights:
            raise DataValidationError("FusionWeights cannot be empty")
        models = [m for m, _ in self.weights]
        if models != sorted(models):
            raise DataValidationError("weights must be ordered by ascending model id")
        if len(set(models)) != len(models):
            raise DataValidationError("duplicate model id in weights")
        values = [w for _, w in self.weights]
        if any(w < 0 for w in values):
            raise DataValidationError("weights must be nonnegative")
        total = 0.0
        for w in values:
            total += w
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise DataValidationError(f"weights sum to {total}, expected 1")

    @classmethod
    def uniform(cls, models: Sequence[str], group_key: object = None) -> "FusionWeights":
        n = len(models)
        return cls(group_key, tuple((m, 1.0 / n) for m in sorted(models)))

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(m for m, _ in self.weights)

    def value(self, model: str) -> float:
        for m, w in self.weights:
            if m == model:
                return w
        raise DataValidationError(f"no weight for model {model!r}")


def compute_weights(ap_table: ApTable, group_key, normalization: str = "fraction") -> FusionWeights:
    """Per-model coefficients from one group's APs; higher AP, higher weight.

    Falls back to uniform 1/N when every normalized AP is zero.
    """
    models = ap_table.models
    if not models:
        raise DataValidationError("AP table is empty")
    aps = [ap_table.get(m, group_key) for m in models]
    norm = normalize_ap(aps, normalization)
    total = 0.0
    for a in norm:
        total += a
    if total == 0.0:
        return FusionWeights.uniform(models, group_key)
    return FusionWeights(group_key, tuple((m, a / total) for m, a in zip(models, norm)))


@dataclass(frozen=True)
class MaskGroup:
    """Instances pooled under one group key, sorted by score descending."""

    key: object
    members: tuple[MaskInstance, ...]

    def __post_init__(self) -> None:
        ranks = [(-m.score, m.model_id) for m in self.members]
        if ranks != sorted(ranks):
            raise DataValidationError("group members must be sorted by score desc")


def _sorted_members(members: list[MaskInstance]) -> tuple[MaskInstance, ...]:
    return tuple(sorted(
        members,
        key=lambda m: (-m.score, m.model_id, m.uid if m.uid is not None else -1)))


def group_predictions(bundle: PredictionBundle, mode: str) -> list[MaskGroup]:
    """Pool instances per component (vertical) or per object (horizontal)."""
    if mode not in ("vertical", "horizontal"):
        raise DataValidationError(f"unknown grouping mode {mode!r}")
    groups = []
    if mode == "vertical":
        for comp in COMPONENTS:
            members = bundle.instances_for(component=comp)
            if members:
                groups.append(MaskGroup(comp, _sorted_members(members)))
    else:
        if any(i.object_id is None for i in bundle.instances):
            raise DataValidationError(
                "horizontal grouping requires object ids on every instance")
        for oid in bundle.object_ids():
            members = bundle.instances_for(object_id=oid)
            if members:
                groups.append(MaskGroup(oid, _sorted_members(members)))
    return groups


def weighted_average(arrays: Sequence[np.ndarray], coeffs: Sequence[float]) -> np.ndarray:
    """Ascending-order weighted sum of aligned float64 arrays, clamped to the
    per-element envelope of the inputs."""
    if len(arrays) != len(coeffs) or not arrays:
        raise DataValidationError("arrays and coefficients must pair up, non-empty")
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"array shapes {a.shape} vs {shape} mismatch")
    acc = arrays[0] * coeffs[0]
    lo = arrays[0]
    hi = arrays[0]
    for a, w in zip(arrays[1:], coeffs[1:]):
        acc = acc + a * w
        lo = np.minimum(lo, a)
        hi = np.maximum(hi, a)
    return np.minimum(np.maximum(acc, lo), hi)


def fuse_masks(group: MaskGroup, weights: FusionWeights) -> np.ndarray:
    """Per-pixel weighted average of the group's masks as a float64 soft mask.

    Members are keyed by model id; a model contributing several masks to the
    group has them merged by elementwise max first; a model with no member
    contributes an empty (all-zero) mask.
    """
    if not group.members:
        raise DataValidationError("cannot fuse an empty group")
    h = group.members[0].mask.height
    w = group.members[0].mask.width
    member_models = {m.model_id for m in group.members}
    extra = member_models - set(weights.models)
    if extra:
        raise DataValidationError(
            f"group has models without weights: {sorted(extra)}")
    per_model = {}
    for inst in group.members:
        if (inst.mask.height, inst.mask.width) != (h, w):
            raise ShapeError("group members must share grid dimensions")
        soft = inst.binary.bits.astype(np.float64)
        prev = per_model.get(inst.model_id)
        per_model[inst.model_id] = soft if prev is None else np.maximum(prev, soft)
    arrays = []
    coeffs = []
    for model, coeff in weights.weights:
        arrays.append(per_model.get(model, np.zeros((h, w), dtype=np.float64)))
        coeffs.append(coeff)
    return weighted_average(arrays, coeffs)


def fuse_logits(maps: Mapping[str, LogitMap], weights: FusionWeights) -> LogitMap:
    """Channel-wise weighted average of per-model logit maps."""
    if set(maps) != set(weights.models):
        raise DataValidationError(
            f"maps for {sorted(maps)} do not match weights for {list(weights.models)}")
    shape = None
    arrays = []
    coeffs = []
    for model, coeff in weights.weights:
        m = maps[model]
        if shape is None:
            shape = m.shape
        elif m.shape != shape:
            raise ShapeError(f"logit map shapes {m.shape} vs {shape} mismatch")
        arrays.append(m.data.astype(np.float64))
        coeffs.append(coeff)
    fused = weighted_average(arrays, coeffs).astype(np.float32)
    return LogitMap(shape[0], shape[1], shape[2], fused)


def binarize(soft: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Threshold a soft mask; a value exactly at the threshold is set."""
    if not (0.0 < threshold < 1.0):
        raise DataValidationError(f"threshold {threshold} outside (0, 1)")
    a = np.asarray(soft, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected 2D soft mask, got ndim={a.ndim}")
    return BinaryMask(a.shape[0], a.shape[1], a >= threshold)
