"""The in-memory prediction bundle: everything one image's models produced."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import DataValidationError
from .grids import AttentionMap, LogitMap
from .masks import MaskInstance

GT_MODEL_ID = "gt"


@dataclass(frozen=True)
class PredictionBundle:
    """All instances and dense maps for one image.

    Instances are indexed by (model, scale, object, component).  RLE masks
    always live on the reference grid (height x width); logit and alpha maps
    live on the per-scale grids.
    """

    image_id: str
    height: int
    width: int
    models: tuple[str, ...]
    scales: tuple[float, ...]
    instances: tuple[MaskInstance, ...]
    ground_truth: tuple[MaskInstance, ...] = ()
    logit_maps: dict = None  # (model, scale) -> LogitMap
    alpha_maps: dict = None  # (model, scale) -> AttentionMap

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DataValidationError("image dimensions must be positive")
        if not self.models:
            raise DataValidationError("bundle must name at least one model")
        if tuple(sorted(self.models)) != self.models:
            raise DataValidationError("model ids must be sorted ascending")
        if len(set(self.models)) != len(self.models):
            raise DataValidationError("model ids must be unique")
        if not self.scales:
            raise DataValidationError("bundle must list at least one scale")
        if any(s <= 0 for s in self.scales):
            raise DataValidationError("scales must be positive")
        if any(a >= b for a, b in zip(self.scales, self.scales[1:])):
            raise DataValidationError("scales must be strictly increasing")
        object.__setattr__(self, "logit_maps", dict(self.logit_maps or {}))
        object.__setattr__(self, "alpha_maps", dict(self.alpha_maps or {}))
        for inst in self.instances:
            self._check_instance(inst, require_model=True)
        for inst in self.ground_truth:
            self._check_instance(inst, require_model=False)
        for (model, scale), m in self.logit_maps.items():
            if not isinstance(m, LogitMap):
                raise DataValidationError("logit_maps values must be LogitMap")
            self._check_key(model, scale, "logit map")
        channels = {m.channels for m in self.logit_maps.values()}
        if len(channels) > 1:
            raise DataValidationError(
                f"logit maps disagree on channel count: {sorted(channels)}")
        for (model, scale), m in self.alpha_maps.items():
            if not isinstance(m, AttentionMap):
                raise DataValidationError("alpha_maps values must be AttentionMap")
            self._check_key(model, scale, "alpha map")

    def _check_key(self, model: str, scale: float, what: str) -> None:
        if model not in self.models:
            raise DataValidationError(f"{what} for unknown model {model!r}")
        if scale not in self.scales:
            raise DataValidationError(f"{what} for unknown scale {scale}")

    def _check_instance(self, inst: MaskInstance, require_model: bool) -> None:
        if (inst.mask.height, inst.mask.width) != (self.height, self.width):
            raise DataValidationError(
                f"instance mask grid {(inst.mask.height, inst.mask.width)} "
                f"!= image grid {(self.height, self.width)}")
        if require_model:
            self._check_key(inst.model_id, inst.scale, "instance")

    @property
    def channels(self) -> int | None:
        for m in self.logit_maps.values():
            return m.channels
        return None

    def with_scale(self, scale: float) -> "PredictionBundle":
        """Single-scale slice of this bundle (instances and maps at ``scale``)."""
        if scale not in self.scales:
            raise DataValidationError(f"bundle has no scale {scale}")
        return replace(
            self,
            scales=(scale,),
            instances=tuple(i for i in self.instances if i.scale == scale),
            logit_maps={k: v for k, v in self.logit_maps.items() if k[1] == scale},
            alpha_maps={k: v for k, v in self.alpha_maps.items() if k[1] == scale},
        )

    def instances_for(self, model: str | None = None, scale: float | None = None,
                      component: str | None = None,
                      object_id: int | None = None) -> list[MaskInstance]:
        out = []
        for inst in self.instances:
            if model is not None and inst.model_id != model:
                continue
            if scale is not None and inst.scale != scale:
                continue
            if component is not None and inst.component != component:
                continue
            if object_id is not None and inst.object_id != object_id:
                continue
            out.append(inst)
        return out

    def object_ids(self) -> list[int]:
        ids = {i.object_id for i in self.instances if i.object_id is not None}
        return sorted(ids)
