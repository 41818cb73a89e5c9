"""On-disk formats: raw tensor files, JSON manifests, PPM overlays.

Tensor file layout (normative):
  8 bytes magic ``SGFTENS\\0``, then four little-endian uint32 fields
  (height, width, channels, reserved == 0), then height*width*channels
  little-endian float32 values, row-major, channel-minor.

Manifests are JSON, schema_version 1, written with sorted keys and 2-space
indentation so identical content yields identical bytes.  Tensor paths are
relative to the manifest's directory.  Overlay images are binary PPM (P6)
with a fixed 5-color palette.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .bundle import GT_MODEL_ID, PredictionBundle
from .errors import DataValidationError, FormatError
from .grids import AttentionMap, LogitMap, scaled_dim
from .masks import BBox, MaskInstance, RleMask

TENSOR_MAGIC = b"SGFTENS\x00"
SCHEMA_VERSION = 1

# background, shell, meat, gonad, muscle (Okabe-Ito, colorblind safe)
PALETTE = (
    (0, 0, 0),
    (230, 159, 0),
    (86, 180, 233),
    (0, 158, 115),
    (213, 94, 0),
)


def save_tensor(path, grid) -> None:
    """Write a LogitMap, AttentionMap, or 2D/3D float array."""
    if isinstance(grid, LogitMap):
        arr = grid.data
    elif isinstance(grid, AttentionMap):
        arr = grid.data[:, :, None]
    else:
        arr = np.asarray(grid, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise FormatError(f"tensor payload must be 2D or 3D, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise DataValidationError("refusing to write non-finite tensor payload")
    h, w, c = arr.shape
    header = TENSOR_MAGIC + struct.pack("<4I", h, w, c, 0)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> np.ndarray:
    """Read a tensor file back as a (h, w, c) float32 array."""
    p = Path(path)
    if not p.is_file():
        raise DataValidationError(f"tensor file not found: {p}")
    blob = p.read_bytes()
    if len(blob) < 24:
        raise FormatError(f"{p}: truncated header ({len(blob)} bytes)")
    if blob[:8] != TENSOR_MAGIC:
        raise FormatError(f"{p}: bad magic {blob[:8]!r}")
    h, w, c, reserved = struct.unpack("<4I", blob[8:24])
    if reserved != 0:
        raise FormatError(f"{p}: reserved header field is {reserved}, expected 0")
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"{p}: non-positive dimensions {(h, w, c)}")
    expected = 24 + h * w * c * 4
    if len(blob) != expected:
        raise FormatError(f"{p}: payload is {len(blob) - 24} bytes, "
                          f"expected {expected - 24}")
    arr = np.frombuffer(blob, dtype="<f4", offset=24).reshape(h, w, c)
    if not np.isfinite(arr).all():
        raise FormatError(f"{p}: payload contains non-finite values")
    return arr.astype(np.float32)


def load_logit_map(path) -> LogitMap:
    arr = load_tensor(path)
    return LogitMap(arr.shape[0], arr.shape[1], arr.shape[2], arr)


def load_attention_map(path) -> AttentionMap:
    arr = load_tensor(path)
    if arr.shape[2] != 1:
        raise FormatError(f"{path}: attention tensor must have 1 channel, "
                          f"got {arr.shape[2]}")
    return AttentionMap(arr.shape[0], arr.shape[1], arr[:, :, 0])


def write_overlay(height: int, width: int, labels: np.ndarray, path) -> None:
    """Render a label grid (values 0..4) as a deterministic binary PPM."""
    a = np.asarray(labels)
    if a.shape != (height, width):
        raise FormatError(f"label grid shape {a.shape} != {(height, width)}")
    if a.size and (a.min() < 0 or a.max() >= len(PALETTE)):
        raise DataValidationError(
            f"labels must lie in [0, {len(PALETTE) - 1}]")
    lut = np.array(PALETTE, dtype=np.uint8)
    pixels = lut[a.astype(np.int64)]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def _instance_record(inst: MaskInstance, with_model: bool) -> dict:
    rec = {
        "object_id": inst.object_id,
        "component": inst.component,
        "score": inst.score,
        "bbox": [inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1],
        "rle": list(inst.mask.counts),
    }
    if with_model:
        rec["model"] = inst.model_id
        rec["scale"] = inst.scale
    return rec


def _tensor_name(model: str, scale: float, kind: str) -> str:
    # repr keeps distinct scales distinct (%g would collide past 6 digits)
    return f"{model}_s{scale!r}_{kind}.tns"


def save_manifest(bundle: PredictionBundle, path, tensors_subdir: str = "tensors") -> Path:
    """Write a bundle as manifest JSON plus tensor files; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "image_id": bundle.image_id,
        "height": bundle.height,
        "width": bundle.width,
        "models": list(bundle.models),
        "scales": list(bundle.scales),
        "instances": [_instance_record(i, True) for i in bundle.instances],
        "ground_truth": [_instance_record(g, False) for g in bundle.ground_truth],
    }
    for field, maps in (("logit_maps", bundle.logit_maps),
                        ("alpha_maps", bundle.alpha_maps)):
        records = []
        kind = "logits" if field == "logit_maps" else "alpha"
        for (model, scale) in sorted(maps, key=lambda k: (k[0], k[1])):
            rel = f"{tensors_subdir}/{_tensor_name(model, scale, kind)}"
            target = path.parent / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            save_tensor(target, maps[(model, scale)])
            records.append({"model": model, "scale": scale, "path": rel})
        if records:
            doc[field] = records
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise FormatError(f"{where}: missing required field {key!r}")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise FormatError(f"{where}: field {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise FormatError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def _load_instance(rec: dict, height: int, width: int, where: str,
                   with_model: bool, uid: int) -> MaskInstance:
    if not isinstance(rec, dict):
        raise FormatError(f"{where}: instance record must be an object")

    def _int(v):
        return isinstance(v, int) and not isinstance(v, bool)

    component = _require(rec, "component", str, where)
    if with_model or "score" in rec:
        score = _require(rec, "score", float, where)
    else:
        score = 1.0
    raw_bbox = _require(rec, "bbox", list, where)
    if len(raw_bbox) != 4 or not all(_int(v) for v in raw_bbox):
        raise FormatError(f"{where}: bbox must be four integers")
    counts = _require(rec, "rle", list, where)
    if not all(_int(v) for v in counts):
        raise FormatError(f"{where}: rle counts must be integers")
    object_id = rec.get("object_id")
    if object_id is not None and not _int(object_id):
        raise FormatError(f"{where}: object_id must be an integer or null")
    model = _require(rec, "model", str, where) if with_model else GT_MODEL_ID
    scale = _require(rec, "scale", float, where) if with_model else 1.0
    try:
        mask = RleMask(height, width, tuple(counts))
        bbox = BBox(*raw_bbox)
        if bbox.x1 > width or bbox.y1 > height:
            raise DataValidationError(
                f"bbox {bbox} exceeds {height}x{width} image")
        return MaskInstance(mask=mask, bbox=bbox, component=component,
                            object_id=object_id, score=score, model_id=model,
                            scale=scale, uid=uid)
    except (FormatError, DataValidationError) as e:
        raise type(e)(f"{where}: {e}") from None


def _load_maps(doc: dict, field: str, base: Path, models, scales,
               height: int, width: int):
    records = doc.get(field, [])
    if not isinstance(records, list):
        raise FormatError(f"{field} must be a list")
    loader = load_logit_map if field == "logit_maps" else load_attention_map
    out = {}
    for k, rec in enumerate(records):
        where = f"{field}[{k}]"
        model = _require(rec, "model", str, where)
        scale = _require(rec, "scale", float, where)
        rel = _require(rec, "path", str, where)
        if model not in models:
            raise DataValidationError(f"{where}: unknown model {model!r}")
        if scale not in scales:
            raise DataValidationError(f"{where}: unknown scale {scale}")
        if (model, scale) in out:
            raise DataValidationError(f"{where}: duplicate entry for "
                                      f"({model!r}, {scale})")
        try:
            grid = loader(base / rel)
        except (FormatError, DataValidationError) as e:
            raise type(e)(f"{where}: {e}") from None
        expected = (scaled_dim(height, scale), scaled_dim(width, scale))
        if (grid.height, grid.width) != expected:
            raise DataValidationError(
                f"{where}: tensor grid {(grid.height, grid.width)} does not "
                f"match scale {scale} of a {height}x{width} image "
                f"(expected {expected})")
        out[(model, scale)] = grid
    return out


def load_manifest(path) -> PredictionBundle:
    """Parse and eagerly validate a manifest into a PredictionBundle."""
    p = Path(path)
    if not p.is_file():
        raise DataValidationError(f"manifest not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{p}: malformed JSON ({e})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{p}: manifest must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{p}: schema_version {version!r} is not "
                          f"{SCHEMA_VERSION}")
    image_id = _require(doc, "image_id", str, "manifest")
    height = _require(doc, "height", int, "manifest")
    width = _require(doc, "width", int, "manifest")
    models = _require(doc, "models", list, "manifest")
    if not models or not all(isinstance(m, str) for m in models):
        raise FormatError("manifest: models must be a non-empty string list")
    scales = _require(doc, "scales", list, "manifest")
    if not scales or not all(isinstance(s, (int, float)) and not isinstance(s, bool)
                             for s in scales):
        raise FormatError("manifest: scales must be a non-empty number list")
    scales = tuple(float(s) for s in scales)
    models = tuple(sorted(models))

    raw_instances = doc.get("instances", [])
    if not isinstance(raw_instances, list):
        raise FormatError("manifest: instances must be a list")
    instances = tuple(
        _load_instance(rec, height, width, f"instances[{k}]", True, uid=k)
        for k, rec in enumerate(raw_instances))
    raw_gt = doc.get("ground_truth", [])
    if not isinstance(raw_gt, list):
        raise FormatError("manifest: ground_truth must be a list")
    ground_truth = tuple(
        _load_instance(rec, height, width, f"ground_truth[{k}]", False, uid=k)
        for k, rec in enumerate(raw_gt))

    logit_maps = _load_maps(doc, "logit_maps", p.parent, models, scales,
                            height, width)
    alpha_maps = _load_maps(doc, "alpha_maps", p.parent, models, scales,
                            height, width)
    return PredictionBundle(
        image_id=image_id, height=height, width=width, models=models,
        scales=scales, instances=instances, ground_truth=ground_truth,
        logit_maps=logit_maps, alpha_maps=alpha_maps)


def write_json_report(doc: dict, path) -> Path:
    """Serialize a report deterministically (sorted keys, trailing newline)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                 encoding="utf-8")
    return p
