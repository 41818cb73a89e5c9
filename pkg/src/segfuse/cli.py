"""Command-line surface: synth, fuse, pipeline, evaluate.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import sys

from .config import PipelineConfig
from .errors import SegfuseError
from .formats import load_manifest, save_manifest, write_json_report
from .pipeline import (run_evaluate, run_fuse, run_pipeline,
                       write_fuse_outputs, write_pipeline_outputs)
from .synth import generate


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2 for
    # data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iou-threshold", type=float, default=0.6,
                   help="mask IoU needed for a true positive (default 0.6)")
    p.add_argument("--normalization", choices=("fraction", "minmax"),
                   default="fraction", help="AP normalization before weighting")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads for independent groups (default 1)")


def _add_weight_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("manifest", help="prediction manifest (JSON)")
    p.add_argument("--calib", metavar="MANIFEST",
                   help="manifest of the weight-calibration split; required "
                        "with --weights ap")
    p.add_argument("--weights", choices=("ap", "uniform"), default="ap",
                   help="model weighting: AP-derived or uniform")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segfuse",
                     description="Deterministic multi-model, multi-scale "
                                 "segmentation fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic fixture")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--models", type=int, default=3)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--perturb", type=int, default=2,
                   help="max perturbation magnitude; model 0 is always exact")
    p.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0])
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("fuse", help="weighted mask fusion across models")
    _add_weight_source(p)
    _add_common(p)
    p.add_argument("--grouping", choices=("vertical", "horizontal", "both"),
                   default="vertical")
    p.add_argument("--binarize-threshold", type=float, default=0.5)

    p = sub.add_parser("pipeline",
                       help="full dense pipeline: ensemble, attention, "
                            "scale chain")
    _add_weight_source(p)
    _add_common(p)
    p.add_argument("--attention-factor", type=float, default=1.0)
    p.add_argument("--beta-const", type=float, default=None,
                   help="skip the attention computation and use this constant "
                        "frame/object gate")
    p.add_argument("--neutral-beta", type=float, default=0.5,
                   help="gate value outside every object region (default 0.5)")
    p.add_argument("--alpha-const", type=float, default=0.5,
                   help="scale gate used when the manifest has no alpha maps")
    p.add_argument("--expand-factor", type=float, default=1.2,
                   help="bounding-box expansion around each object (default 1.2)")
    p.add_argument("--binarize-threshold", type=float, default=0.5)

    p = sub.add_parser("evaluate", help="AP tables of predictions vs ground truth")
    p.add_argument("manifest", help="prediction manifest (JSON)")
    p.add_argument("gt_manifest", help="manifest holding ground_truth records")
    p.add_argument("--iou-threshold", type=float, default=0.6)
    p.add_argument("--out", metavar="PATH",
                   help="write the report here instead of stdout")
    return parser


def _config_from(args: argparse.Namespace, **extra) -> PipelineConfig:
    fields = {}
    mapping = {
        "iou_threshold": "iou_threshold",
        "normalization": "normalization",
        "grouping": "grouping",
        "attention_factor": "attention_factor",
        "binarize_threshold": "binarize_threshold",
        "alpha_const": "alpha_const",
        "neutral_beta": "neutral_beta",
        "beta_const": "beta_const",
        "expand_factor": "expand_factor",
        "out_dir": "out_dir",
        "weights": "weights_mode",
        "workers": "workers",
        "seed": "seed",
    }
    for arg_name, cfg_name in mapping.items():
        if hasattr(args, arg_name) and getattr(args, arg_name) is not None:
            fields[cfg_name] = getattr(args, arg_name)
    fields.update(extra)
    return PipelineConfig(**fields)


def _load_calib(args: argparse.Namespace, parser: argparse.ArgumentParser):
    if args.weights == "uniform":
        return None
    if not args.calib:
        parser.error("--weights ap requires --calib MANIFEST "
                     "(name the weight-calibration split explicitly)")
    return load_manifest(args.calib)


def _cmd_synth(args) -> int:
    cfg = _config_from(args, scales=tuple(args.scales),
                       synth_objects=args.objects, synth_models=args.models,
                       synth_height=args.height, synth_width=args.width,
                       synth_perturb=args.perturb)
    bundle = generate(cfg)
    path = save_manifest(bundle, f"{cfg.out_dir}/manifest.json")
    print(f"wrote {path}")
    return 0


def _cmd_fuse(args, parser) -> int:
    cfg = _config_from(args)
    bundle = load_manifest(args.manifest)
    calib = _load_calib(args, parser)
    modes = ("vertical", "horizontal") if cfg.grouping == "both" else (cfg.grouping,)
    for mode in modes:
        fused, records = run_fuse(bundle, calib, cfg, mode)
        paths = write_fuse_outputs(fused, records, cfg, mode)
        print(f"wrote {paths['manifest']}")
        print(f"wrote {paths['weights']}")
    return 0


def _cmd_pipeline(args, parser) -> int:
    cfg = _config_from(args)
    bundle = load_manifest(args.manifest)
    calib = _load_calib(args, parser)
    result = run_pipeline(bundle, calib, cfg)
    paths = write_pipeline_outputs(result, bundle, cfg)
    for key in ("fused_logits", "labels", "overlay", "manifest", "report"):
        print(f"wrote {paths[key]}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = PipelineConfig(iou_threshold=args.iou_threshold)
    pred = load_manifest(args.manifest)
    gt = load_manifest(args.gt_manifest)
    report = run_evaluate(pred, gt, cfg)
    if args.out:
        path = write_json_report(report, args.out)
        print(f"wrote {path}")
    else:
        import json
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "fuse":
            return _cmd_fuse(args, parser)
        if args.command == "pipeline":
            return _cmd_pipeline(args, parser)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
    except SegfuseError as e:
        print(f"segfuse: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"segfuse: error: {e}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
