"""End-to-end orchestration behind the CLI commands.

Weight plumbing: the whole-frame ensemble fuses channel c with the vertical
(per-component) weights of component c, background with uniform weights;
per-object local ensembles use that object's horizontal weights.  All
weighted sums and blends inherit the deterministic ordering rules of the
fusion and grids modules, so a fixed (manifest, config) pair reproduces
byte-identical outputs regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import (AttentionConfig, attention_to_map, difference_matrix,
                        fuse_global_local, local_attention, row_normalize)
from .bundle import PredictionBundle
from .config import PipelineConfig
from .errors import DataValidationError
from .formats import save_manifest, save_tensor, write_json_report, write_overlay
from .fusion import (FusionWeights, MaskGroup, binarize, compute_weights,
                     fuse_logits, fuse_masks, group_predictions,
                     weighted_average)
from .grids import (AttentionMap, LogitMap, argmax_channel, bilinear_resize,
                    scaled_dim)
from .hierarchy import ScaleChain, ScaleEntry, run_inference_chain
from .masks import (COMPONENT_GAIN, COMPONENT_IDS, COMPONENTS, BBox,
                    BinaryMask, MaskInstance, crop, expand_bbox, rle_encode,
                    scale_box, tight_bbox)
from .metrics import ApTable, group_ap

ENSEMBLE_MODEL_ID = "ensemble"
PIPELINE_MODEL_ID = "pipeline"


def _pmap(fn, items, workers: int) -> list:
    """Order-preserving map over pure tasks; identical output for any worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _calib_slice(calib: PredictionBundle | None, scale: float) -> PredictionBundle:
    if calib is None:
        raise DataValidationError(
            "AP-based weights need a calibration manifest (--calib), or pass "
            "--weights uniform")
    if not calib.ground_truth:
        raise DataValidationError(
            "calibration manifest has no ground_truth records; AP-based "
            "weights cannot be computed (no silent uniform fallback)")
    if scale not in calib.scales:
        raise DataValidationError(
            f"calibration manifest has no predictions at scale {scale}")
    return calib.with_scale(scale)


def _ap_table(calib: PredictionBundle | None, scale: float, mode: str,
              cfg: PipelineConfig) -> ApTable:
    sub = _calib_slice(calib, scale)
    return group_ap(sub, sub.ground_truth, mode, cfg.iou_threshold)


def _weights_record(scale: float, mode: str, w: FusionWeights) -> dict:
    return {"scale": scale, "mode": mode, "group": w.group_key,
            "weights": {m: v for m, v in w.weights}}


# ---------------------------------------------------------------------------
# mask-level fusion (the "fuse" command)

def run_fuse(bundle: PredictionBundle, calib: PredictionBundle | None,
             cfg: PipelineConfig, mode: str) -> tuple[PredictionBundle, list[dict]]:
    """Group, weight, and average instance masks across models at each scale.

    Returns the fused bundle (model id "ensemble") and the per-group weight
    records used.
    """
    records: list[dict] = []
    fused: list[MaskInstance] = []
    for scale in bundle.scales:
        sub = bundle.with_scale(scale)
        groups = group_predictions(sub, mode)
        if cfg.weights_mode == "uniform":
            weights = {g.key: FusionWeights.uniform(sub.models, g.key)
                       for g in groups}
        else:
            table = _ap_table(calib, scale, mode, cfg)
            weights = {g.key: compute_weights(table, g.key, cfg.normalization)
                       for g in groups}
        tasks = []
        for g in groups:
            records.append(_weights_record(scale, mode, weights[g.key]))
            cells: dict = {}
            for inst in g.members:
                if inst.object_id is None:
                    raise DataValidationError(
                        "mask fusion requires object ids to put instances "
                        "from different models in correspondence")
                cell = inst.object_id if mode == "vertical" else inst.component
                cells.setdefault(cell, []).append(inst)
            for cell_key in sorted(cells, key=str):
                tasks.append((g.key, weights[g.key], cell_key, cells[cell_key]))

        def _fuse_cell(task):
            group_key, w, cell_key, members = task
            soft = fuse_masks(MaskGroup(group_key, tuple(members)), w)
            binary = binarize(soft, cfg.binarize_threshold)
            box = tight_bbox(binary)
            if box is None:
                return None
            best = {}
            for m in members:
                best[m.model_id] = max(best.get(m.model_id, 0.0), m.score)
            score = 0.0
            for model, coeff in w.weights:
                score += coeff * best.get(model, 0.0)
            component = group_key if mode == "vertical" else cell_key
            object_id = cell_key if mode == "vertical" else group_key
            return MaskInstance(
                mask=rle_encode(binary), bbox=box, component=component,
                object_id=object_id, score=min(1.0, max(0.0, score)),
                model_id=ENSEMBLE_MODEL_ID, scale=scale)

        for result in _pmap(_fuse_cell, tasks, cfg.workers):
            if result is not None:
                fused.append(result)

    fused = tuple(
        MaskInstance(mask=i.mask, bbox=i.bbox, component=i.component,
                     object_id=i.object_id, score=i.score, model_id=i.model_id,
                     scale=i.scale, uid=k)
        for k, i in enumerate(fused))
    out = PredictionBundle(
        image_id=bundle.image_id, height=bundle.height, width=bundle.width,
        models=(ENSEMBLE_MODEL_ID,), scales=bundle.scales, instances=fused,
        ground_truth=bundle.ground_truth)
    return out, records


def write_fuse_outputs(fused: PredictionBundle, records: list[dict],
                       cfg: PipelineConfig, mode: str) -> dict[str, Path]:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = save_manifest(fused, out_dir / f"fused_{mode}.json")
    report = write_json_report(
        {"schema_version": 1, "kind": "fusion_weights",
         "image_id": fused.image_id, "grouping": mode,
         "normalization": cfg.normalization, "weights_mode": cfg.weights_mode,
         "records": records},
        out_dir / f"weights_{mode}.json")
    return {"manifest": manifest, "weights": report}


# ---------------------------------------------------------------------------
# dense pipeline (the "pipeline" command)

def _channel_weights(table: ApTable | None, models: tuple[str, ...],
                     cfg: PipelineConfig, channels: int):
    """Per-channel weight vectors: component channels from vertical APs,
    background uniform."""
    vectors = []
    for ch in range(channels):
        if ch == 0 or table is None:
            vectors.append(FusionWeights.uniform(models, f"channel{ch}"))
        else:
            vectors.append(compute_weights(table, COMPONENTS[ch - 1],
                                           cfg.normalization))
    return vectors


def _fuse_global(maps: dict[str, LogitMap], vectors) -> LogitMap:
    first = next(iter(maps.values()))
    h, w, c = first.shape
    out = np.empty((h, w, c), dtype=np.float32)
    for ch, vec in enumerate(vectors):
        arrays = []
        coeffs = []
        for model, coeff in vec.weights:
            arrays.append(maps[model].data[:, :, ch].astype(np.float64))
            coeffs.append(coeff)
        out[:, :, ch] = weighted_average(arrays, coeffs).astype(np.float32)
    return LogitMap(h, w, c, out)


def _local_map(sub: PredictionBundle, model: str, oid: int, region_ref: BBox,
               region_s: BBox, channels: int) -> LogitMap:
    """Rasterize one model's per-object component masks into crop logits,
    using the shared gain ramp so nested components survive the argmax."""
    data = np.zeros((region_s.height, region_s.width, channels), dtype=np.float32)
    for inst in sub.instances_for(model=model, object_id=oid):
        patch = crop(inst.binary, region_ref).bits.astype(np.float32)
        resized = bilinear_resize(LogitMap.from_array(patch),
                                  region_s.height, region_s.width)
        ch = COMPONENT_IDS[inst.component]
        gain = np.float32(COMPONENT_GAIN[inst.component] * inst.score)
        data[:, :, ch] = np.maximum(data[:, :, ch], gain * resized.data[:, :, 0])
    return LogitMap(region_s.height, region_s.width, channels, data)


def _object_regions(sub: PredictionBundle, cfg: PipelineConfig,
                    height: int, width: int) -> dict[int, BBox]:
    regions: dict[int, BBox] = {}
    for inst in sub.instances:
        if inst.object_id is None:
            raise DataValidationError(
                "the pipeline requires object ids on every instance")
        box = regions.get(inst.object_id)
        regions[inst.object_id] = inst.bbox if box is None else box.union(inst.bbox)
    return {oid: expand_bbox(box, cfg.expand_factor, height, width)
            for oid, box in sorted(regions.items())}


def _mean_alpha(sub: PredictionBundle, scale: float, sh: int, sw: int,
                cfg: PipelineConfig) -> AttentionMap:
    present = [sub.alpha_maps[(m, scale)] for m in sub.models
               if (m, scale) in sub.alpha_maps]
    if not present:
        return AttentionMap.full(sh, sw, cfg.alpha_const)
    for a in present:
        if a.shape != (sh, sw):
            raise DataValidationError(
                f"alpha map grid {a.shape} != scale grid {(sh, sw)}")
    acc = present[0].data.astype(np.float64)
    for a in present[1:]:
        acc = acc + a.data.astype(np.float64)
    acc = acc / len(present)
    return AttentionMap(sh, sw, np.clip(acc, 0.0, 1.0).astype(np.float32))


@dataclass(frozen=True)
class PipelineResult:
    final_logits: LogitMap            # at the reference grid
    labels: np.ndarray                # argmax label ids, reference grid
    instances: tuple[MaskInstance, ...]
    report: dict


def run_pipeline(bundle: PredictionBundle, calib: PredictionBundle | None,
                 cfg: PipelineConfig) -> PipelineResult:
    """Ensemble logits, local attention, and the coarse-to-fine fold."""
    height, width = bundle.height, bundle.width
    channels = bundle.channels
    if channels is None:
        raise DataValidationError("pipeline needs logit maps in the manifest")
    if channels != len(COMPONENTS) + 1:
        raise DataValidationError(
            f"pipeline expects {len(COMPONENTS) + 1} channels (background + "
            f"components), got {channels}")
    weights_records: list[dict] = []
    entries = []
    attn_cfg = AttentionConfig(cfg.attention_factor)

    for scale in bundle.scales:
        sub = bundle.with_scale(scale)
        maps = {}
        for model in sub.models:
            grid = sub.logit_maps.get((model, scale))
            if grid is None:
                raise DataValidationError(
                    f"no logit map for model {model!r} at scale {scale}")
            maps[model] = grid
        sh = scaled_dim(height, scale)
        sw = scaled_dim(width, scale)

        if cfg.weights_mode == "uniform":
            vert_table = None
            horiz_table = None
        else:
            vert_table = _ap_table(calib, scale, "vertical", cfg)
            horiz_table = _ap_table(calib, scale, "horizontal", cfg)
        vectors = _channel_weights(vert_table, sub.models, cfg, channels)
        for vec in vectors[1:]:
            weights_records.append(_weights_record(scale, "vertical", vec))
        ens_global = _fuse_global(maps, vectors)

        regions_ref = _object_regions(sub, cfg, height, width)
        oids = list(regions_ref)
        regions_s = {oid: scale_box(regions_ref[oid], height, width, sh, sw)
                     for oid in oids}

        def _object_task(oid: int):
            if cfg.weights_mode == "uniform":
                w = FusionWeights.uniform(sub.models, oid)
            else:
                w = compute_weights(horiz_table, oid, cfg.normalization)
            local_maps = {m: _local_map(sub, m, oid, regions_ref[oid],
                                        regions_s[oid], channels)
                          for m in sub.models}
            fused_local = fuse_logits(local_maps, w)
            beta_patch = None
            if cfg.beta_const is None:
                g_rows = crop(ens_global, regions_s[oid]).data.reshape(
                    -1, channels).astype(np.float64)
                l_rows = fused_local.data.reshape(-1, channels).astype(np.float64)
                attn = row_normalize(local_attention(
                    difference_matrix(g_rows, l_rows), attn_cfg))
                # scalar gate per pixel: a uniform row means no channel stands
                # out as disagreeing (gate -> 1, trust the frame); a peaked row
                # means concentrated disagreement (gate -> 0, trust the object)
                k = attn.shape[1]
                peak = attn.max(axis=1)
                rows = (np.ones_like(peak) if k == 1
                        else np.clip((1.0 - peak) / (1.0 - 1.0 / k), 0.0, 1.0))
                beta_patch = rows.reshape(
                    regions_s[oid].height, regions_s[oid].width)
            return w, fused_local, beta_patch

        locals_list = []
        beta_patches = []
        for oid, (w, fused_local, beta_patch) in zip(
                oids, _pmap(_object_task, oids, cfg.workers)):
            weights_records.append(_weights_record(scale, "horizontal", w))
            locals_list.append((fused_local, regions_s[oid]))
            if beta_patch is not None:
                beta_patches.append((beta_patch, regions_s[oid]))

        if cfg.beta_const is not None:
            beta = AttentionMap.full(sh, sw, cfg.beta_const)
        else:
            beta = attention_to_map(beta_patches, sh, sw, neutral=cfg.neutral_beta)
        fused_scale = fuse_global_local(ens_global, locals_list, beta)
        entries.append(ScaleEntry(scale, fused_scale,
                                  _mean_alpha(sub, scale, sh, sw, cfg)))

    final = run_inference_chain(ScaleChain(tuple(entries)))
    final_ref = bilinear_resize(final, height, width)
    labels = argmax_channel(final_ref)

    instances = _label_instances(bundle, final_ref, labels, cfg)
    report = {
        "schema_version": 1,
        "kind": "pipeline_report",
        "image_id": bundle.image_id,
        "scales": list(bundle.scales),
        "weights": weights_records,
        "ap": _evaluation_records(bundle, instances, cfg),
    }
    return PipelineResult(final_ref, labels, instances, report)


def _label_instances(bundle: PredictionBundle, final_ref: LogitMap,
                     labels: np.ndarray, cfg: PipelineConfig
                     ) -> tuple[MaskInstance, ...]:
    """Carve the final label grid into per-object component instances.

    Components form a containment chain (shell > meat > gonad > muscle) and
    the argmax keeps only the innermost label, so component c's mask is
    every pixel labeled c or deeper, restricted to the object's region.
    """
    shifted = final_ref.data.astype(np.float64)
    shifted -= shifted.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    probs = e / np.cumsum(e, axis=2)[:, :, -1:]
    # tail_probs[..., c] = P(label >= c): the component-or-deeper probability
    tail_probs = np.cumsum(probs[:, :, ::-1], axis=2)[:, :, ::-1]

    regions: dict[int, BBox] = {}
    for inst in bundle.instances:
        if inst.object_id is None:
            continue
        box = regions.get(inst.object_id)
        regions[inst.object_id] = inst.bbox if box is None else box.union(inst.bbox)
    out = []
    uid = 0
    for oid in sorted(regions):
        region = expand_bbox(regions[oid], cfg.expand_factor,
                             bundle.height, bundle.width)
        inside = np.zeros_like(labels, dtype=bool)
        inside[region.y0:region.y1, region.x0:region.x1] = True
        for comp in COMPONENTS:
            ch = COMPONENT_IDS[comp]
            bits = (labels >= ch) & inside
            if not bits.any():
                continue
            mask = BinaryMask(bundle.height, bundle.width, bits)
            score = float(np.mean(tail_probs[:, :, ch][bits]))
            out.append(MaskInstance(
                mask=rle_encode(mask), bbox=tight_bbox(mask), component=comp,
                object_id=oid, score=min(1.0, max(0.0, score)),
                model_id=PIPELINE_MODEL_ID, scale=1.0, uid=uid))
            uid += 1
    return tuple(out)


def _evaluation_records(bundle: PredictionBundle,
                        instances: tuple[MaskInstance, ...],
                        cfg: PipelineConfig) -> list[dict] | None:
    if not bundle.ground_truth:
        return None
    eval_bundle = PredictionBundle(
        image_id=bundle.image_id, height=bundle.height, width=bundle.width,
        models=(PIPELINE_MODEL_ID,), scales=(1.0,), instances=instances,
        ground_truth=bundle.ground_truth)
    records = []
    vert = group_ap(eval_bundle, bundle.ground_truth, "vertical",
                    cfg.iou_threshold)
    for comp in COMPONENTS:
        if (PIPELINE_MODEL_ID, comp) in vert.entries:
            records.append({"mode": "vertical", "model": PIPELINE_MODEL_ID,
                            "group": comp,
                            "ap": vert.entries[(PIPELINE_MODEL_ID, comp)]})
    if all(g.object_id is not None for g in bundle.ground_truth):
        horiz = group_ap(eval_bundle, bundle.ground_truth, "horizontal",
                         cfg.iou_threshold)
        for key in sorted(horiz.entries):
            records.append({"mode": "horizontal", "model": key[0],
                            "group": key[1], "ap": horiz.entries[key]})
    return records


def write_pipeline_outputs(result: PipelineResult, bundle: PredictionBundle,
                           cfg: PipelineConfig) -> dict[str, Path]:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    save_tensor(out_dir / "fused_logits.tns", result.final_logits)
    paths["fused_logits"] = out_dir / "fused_logits.tns"
    save_tensor(out_dir / "labels.tns",
                result.labels.astype(np.float32)[:, :, None])
    paths["labels"] = out_dir / "labels.tns"
    write_overlay(bundle.height, bundle.width, result.labels,
                  out_dir / "overlay.ppm")
    paths["overlay"] = out_dir / "overlay.ppm"
    fused_bundle = PredictionBundle(
        image_id=bundle.image_id, height=bundle.height, width=bundle.width,
        models=(PIPELINE_MODEL_ID,), scales=(1.0,),
        instances=result.instances, ground_truth=bundle.ground_truth)
    paths["manifest"] = save_manifest(fused_bundle, out_dir / "instances.json")
    paths["report"] = write_json_report(result.report, out_dir / "report.json")
    return paths


# ---------------------------------------------------------------------------
# evaluation (the "evaluate" command)

def run_evaluate(pred: PredictionBundle, gt: PredictionBundle,
                 cfg: PipelineConfig) -> dict:
    """AP tables of a prediction manifest against a ground-truth manifest."""
    if pred.image_id != gt.image_id:
        raise DataValidationError(
            f"image id mismatch: predictions are for {pred.image_id!r}, "
            f"ground truth for {gt.image_id!r}")
    gts = gt.ground_truth
    if not gts:
        raise DataValidationError(
            "ground-truth manifest has no ground_truth records")
    records = []
    for scale in pred.scales:
        sub = pred.with_scale(scale)
        vert = group_ap(sub, gts, "vertical", cfg.iou_threshold)
        for model in sub.models:
            for comp in COMPONENTS:
                if (model, comp) in vert.entries:
                    records.append({"scale": scale, "mode": "vertical",
                                    "model": model, "group": comp,
                                    "ap": vert.entries[(model, comp)]})
        horiz = group_ap(sub, gts, "horizontal", cfg.iou_threshold)
        for key in sorted(horiz.entries):
            records.append({"scale": scale, "mode": "horizontal",
                            "model": key[0], "group": key[1],
                            "ap": horiz.entries[key]})
    return {"schema_version": 1, "kind": "evaluation", "image_id": pred.image_id,
            "iou_threshold": cfg.iou_threshold, "records": records}
