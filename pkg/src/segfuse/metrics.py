"""Mask average precision at a fixed IoU threshold.

Matching is greedy in descending score order (ties broken by prediction id)
against unmatched ground truths of the same component; AP uses all-point
interpolation over the cumulative precision/recall sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .bundle import PredictionBundle
from .errors import DataValidationError
from .masks import COMPONENTS, MaskInstance, iou


@dataclass(frozen=True)
class MatchResult:
    """Scored predictions in evaluation order, plus the group's gt count.

    Entries are (prediction id, score, is_true_positive), sorted by score
    descending with ties broken by prediction id ascending.
    """

    entries: tuple[tuple[int, float, bool], ...]
    gt_count: int

    def __post_init__(self) -> None:
        if self.gt_count < 0:
            raise DataValidationError("ground-truth count cannot be negative")
        keys = [(-score, uid) for uid, score, _ in self.entries]
        if keys != sorted(keys):
            raise DataValidationError("match entries must be sorted by score desc")


def _pred_key(inst: MaskInstance, position: int) -> int:
    return inst.uid if inst.uid is not None else position


def match_predictions(preds: Sequence[MaskInstance], gts: Sequence[MaskInstance],
                      iou_threshold: float) -> MatchResult:
    """Greedily match predictions to same-component ground truths.

    A prediction is a true positive iff its best-IoU unmatched ground truth
    of the same component reaches the threshold; that ground truth is then
    consumed.  Empty inputs are allowed.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise DataValidationError(f"IoU threshold {iou_threshold} outside (0, 1]")
    grids = {(i.mask.height, i.mask.width) for i in (*preds, *gts)}
    if len(grids) > 1:
        raise DataValidationError(
            f"predictions and ground truths live on different grids: "
            f"{sorted(grids)}")
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i].score, _pred_key(preds[i], i)))
    taken = [False] * len(gts)
    entries = []
    for i in order:
        pred = preds[i]
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.component != pred.component:
                continue
            v = iou(pred.binary, gt.binary)
            if v > best_iou:
                best_iou = v
                best_j = j
        is_tp = best_j >= 0 and best_iou >= iou_threshold
        if is_tp:
            taken[best_j] = True
        entries.append((_pred_key(pred, i), pred.score, is_tp))
    return MatchResult(tuple(entries), len(gts))


def average_precision(m: MatchResult) -> float:
    """All-point interpolated AP of a match result.

    With no ground truths the value is 1.0 when there are also no
    predictions (nothing to find, nothing claimed) and 0.0 otherwise.
    """
    n = len(m.entries)
    if m.gt_count == 0:
        return 1.0 if n == 0 else 0.0
    if n == 0:
        return 0.0
    precisions = []
    recalls = []
    tp_cum = 0
    for k, (_, _, is_tp) in enumerate(m.entries, start=1):
        tp_cum += int(is_tp)
        precisions.append(tp_cum / k)
        recalls.append(tp_cum / m.gt_count)
    # precision envelope: max over the suffix, accumulated right to left
    envelope = [0.0] * n
    running = 0.0
    for k in range(n - 1, -1, -1):
        running = max(running, precisions[k])
        envelope[k] = running
    ap = 0.0
    prev_recall = 0.0
    for k in range(n):
        ap += (recalls[k] - prev_recall) * envelope[k]
        prev_recall = recalls[k]
    return ap


@dataclass(frozen=True)
class ApTable:
    """AP per (model id, group key); the group key is a component label in
    vertical mode or an object id in horizontal mode."""

    entries: dict  # (model_id, group_key) -> float

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", dict(self.entries))
        for (model, group), ap in self.entries.items():
            if not (0.0 <= ap <= 1.0):
                raise DataValidationError(
                    f"AP {ap} for ({model!r}, {group!r}) outside [0, 1]")

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(sorted({m for m, _ in self.entries}))

    @property
    def group_keys(self) -> tuple:
        keys = {g for _, g in self.entries}
        return tuple(sorted(keys, key=lambda k: (str(type(k)), k)))

    def get(self, model: str, group) -> float:
        try:
            return self.entries[(model, group)]
        except KeyError:
            raise DataValidationError(
                f"no AP entry for model {model!r} in group {group!r}") from None


def group_ap(bundle: PredictionBundle, gts: Sequence[MaskInstance], mode: str,
             iou_threshold: float) -> ApTable:
    """AP per (model, component) in vertical mode or (model, object id) in
    horizontal mode, pooling the complementary axis."""
    if mode not in ("vertical", "horizontal"):
        raise DataValidationError(f"unknown grouping mode {mode!r}")
    entries = {}
    if mode == "vertical":
        present = {i.component for i in bundle.instances}
        present |= {g.component for g in gts}
        keys = [c for c in COMPONENTS if c in present]
        for model in bundle.models:
            for comp in keys:
                preds = bundle.instances_for(model=model, component=comp)
                comp_gts = [g for g in gts if g.component == comp]
                entries[(model, comp)] = average_precision(
                    match_predictions(preds, comp_gts, iou_threshold))
    else:
        ids = {i.object_id for i in bundle.instances}
        ids |= {g.object_id for g in gts}
        if None in ids:
            raise DataValidationError(
                "horizontal grouping requires object ids on every instance")
        for model in bundle.models:
            for oid in sorted(ids):
                preds = bundle.instances_for(model=model, object_id=oid)
                obj_gts = [g for g in gts if g.object_id == oid]
                entries[(model, oid)] = average_precision(
                    match_predictions(preds, obj_gts, iou_threshold))
    return ApTable(entries)


def normalize_ap(aps: Sequence[float], mode: str = "fraction") -> list[float]:
    """Map raw AP fractions onto comparable weights feedstock.

    fraction: identity (inputs are already 0..1 fractions).
    minmax:   (ap - min) / (max - min) plus a 1e-6 floor on every output;
              all-equal inputs map to all ones.
    """
    if not aps:
        raise DataValidationError("cannot normalize an empty AP list")
    values = [float(a) for a in aps]
    for a in values:
        if not (0.0 <= a <= 1.0):
            raise DataValidationError(f"AP {a} outside [0, 1]")
    if mode == "fraction":
        return values
    if mode == "minmax":
        lo = min(values)
        hi = max(values)
        if hi == lo:
            return [1.0] * len(values)
        return [(a - lo) / (hi - lo) + 1e-6 for a in values]
    raise DataValidationError(f"unknown normalization mode {mode!r}")
