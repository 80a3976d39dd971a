"""Command-line entry point: ``nestseg <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import boundary_distance_field, radial_field
from .grid import to_semantic
from .io import (RunConfig, read_field, read_label_mask, write_field, write_label_mask,
                 write_metric_report)
from .losses import FieldTargets, LossConfig, outside_inner_mass, toy_fit, wbr_exclusive, wbr_overlap, wbr_penalty
from .metrics import ImagePair, metric_table
from .nms import nms, propose, render_instances
from .synth import SceneSpec, gen_scene


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    loss = cfg.loss.as_dict()
    for key in ("lambda1", "lambda2", "lambda3", "eps", "alpha"):
        if getattr(args, key, None) is not None:
            loss[key] = getattr(args, key)
    cfg.loss = LossConfig(**loss)
    for key in ("prob_thresh", "nms_thresh", "n_rays", "nesting", "aggregation", "outer_policy",
                "reduction", "output_format", "seed"):
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    if getattr(args, "taus", None):
        cfg.taus = tuple(float(t) for t in args.taus.split(","))
        RunConfig.__post_init__(cfg)
    return cfg


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fields(args):
    cfg = _config(args)
    mask = read_label_mask(args.mask)
    write_field(boundary_distance_field(mask), args.out_d)
    write_field(radial_field(mask, cfg.n_rays), args.out_r)


def _proposals(args, cfg):
    d = read_field(args.d)
    r = read_field(args.r)
    return d, propose(d, r, cfg.prob_thresh)


def cmd_reconstruct(args):
    cfg = _config(args)
    d, props = _proposals(args, cfg)
    if args.nms:
        props = nms(props, cfg.nms_thresh, *d.shape)
    polys = [{"centre": list(p.pixel), "radii": [float(v) for v in p.polygon.radii], "score": p.score}
             for p in props]
    _emit(json.dumps({"n_rays": int(read_field(args.r).shape[2]), "polygons": polys}, sort_keys=True) + "\n",
          args.out)


def cmd_nms(args):
    cfg = _config(args)
    d, props = _proposals(args, cfg)
    kept = nms(props, cfg.nms_thresh, *d.shape)
    write_label_mask(render_instances(kept, *d.shape), args.out)


def cmd_eval(args):
    cfg = _config(args)
    if len(args.gt) != len(args.pred):
        raise ValueError("--gt and --pred must be given the same number of times")
    nested = bool(args.gt_outer or args.pred_outer)
    if nested and not (len(args.gt_outer or []) == len(args.pred_outer or []) == len(args.gt)):
        raise ValueError("--gt-outer/--pred-outer must pair up with every --gt/--pred")
    images = []
    for i, (g, p) in enumerate(zip(args.gt, args.pred)):
        if nested:
            images.append(ImagePair(read_label_mask(g), read_label_mask(p),
                                    read_label_mask(args.gt_outer[i]), read_label_mask(args.pred_outer[i])))
        else:
            images.append(ImagePair(read_label_mask(g), read_label_mask(p)))
    report = metric_table(images, cfg.taus, cfg.nesting, cfg.aggregation, cfg.outer_policy,
                          config=cfg.echo(), workers=args.workers)
    _emit(write_metric_report(report, cfg.output_format), args.out)


def cmd_penalty(args):
    cfg = _config(args)
    pred_inner = to_semantic(read_label_mask(args.pred_inner))
    pred_outer = to_semantic(read_label_mask(args.pred_outer))
    gt_outer = to_semantic(read_label_mask(args.gt_outer))
    eps = cfg.loss.eps
    if args.kind == "wbr":
        value = wbr_penalty(pred_inner, pred_outer, gt_outer, eps)
    else:
        if not (args.pred_inner2 and args.gt_inner):
            raise ValueError(f"--kind {args.kind} needs --pred-inner2 and --gt-inner")
        pred3 = to_semantic(read_label_mask(args.pred_inner2))
        gt1 = to_semantic(read_label_mask(args.gt_inner))
        if args.kind == "exclusive":
            value = wbr_exclusive(pred_inner, pred3, pred_outer, gt1, gt_outer, eps)
        else:
            if cfg.loss.alpha is None:
                raise ValueError("--kind overlap needs --alpha")
            value = wbr_overlap(pred_inner, pred3, pred_outer, gt1, gt_outer, cfg.loss.alpha, eps)
    out = {"kind": args.kind, "eps": eps, "value": value}
    if args.kind == "overlap":
        out["alpha"] = cfg.loss.alpha
    _emit(json.dumps(out, sort_keys=True) + "\n", args.out)


def _scene_spec(cfg: RunConfig, seed) -> SceneSpec:
    data = dict(cfg.scene)
    data["seed"] = cfg.seed if seed is None else seed
    return SceneSpec.from_dict(data)


def cmd_synth(args):
    cfg = _config(args)
    spec = _scene_spec(cfg, args.seed)
    scene = gen_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "png" if args.format == "png" else "sseg"
    write_label_mask(scene.gt_outer, out / f"gt_outer.{ext}", args.format)
    write_label_mask(scene.gt_inner, out / f"gt_inner.{ext}", args.format)
    meta = {"spec": spec.to_dict(), "containment": {str(k): v for k, v in sorted(scene.containment.items())}}
    (out / "scene.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


DEMO_SCENE = {"height": 48, "width": 48, "n_outer": 1, "inner_per_outer": [1, 2],
              "outer_radius": [14.0, 18.0], "inner_radius": [4.0, 6.0]}


def cmd_demo_fit(args):
    cfg = _config(args)
    scene_cfg = dict(DEMO_SCENE)
    scene_cfg.update(cfg.scene)
    cfg.scene = scene_cfg
    spec = _scene_spec(cfg, args.seed)
    scene = gen_scene(spec)
    t1 = FieldTargets.from_mask(scene.gt_inner, cfg.n_rays)
    t2 = FieldTargets.from_mask(scene.gt_outer, cfg.n_rays)
    gt_outer = to_semantic(scene.gt_outer)
    runs = {}
    for name, lam3 in (("none", 0.0), ("wbr", cfg.loss.lambda3)):
        loss = LossConfig(cfg.loss.lambda1, cfg.loss.lambda2, lam3, cfg.loss.eps)
        runs[name] = toy_fit(t1, t2, gt_outer, loss, "wbr", args.iterations, args.step_size, spec.seed,
                             noise=args.noise, reduction=cfg.reduction)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss_lambda3_0", "loss_wbr"])
        for i, (a, b) in enumerate(zip(runs["none"].trace, runs["wbr"].trace)):
            w.writerow([i, repr(float(a)), repr(float(b))])
    summary = {"config": cfg.echo(), "seed": spec.seed, "iterations": args.iterations,
               "step_size": args.step_size, "noise": args.noise}
    for name, res in runs.items():
        summary[name] = {
            "outside_inner_mass_before": outside_inner_mass(res.initial1, gt_outer),
            "outside_inner_mass_after": outside_inner_mass(res.branch1, gt_outer),
            "final_loss": float(res.trace[-1]),
        }
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    (out / "summary.json").write_text(text)
    sys.stdout.write(text)


def _add_loss_flags(p):
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestseg", description="Nested star-convex instance segmentation tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON run configuration")
        p.set_defaults(func=fn)
        return p

    p = add("fields", cmd_fields, "label mask -> d and r field files")
    p.add_argument("mask")
    p.add_argument("--out-d", required=True)
    p.add_argument("--out-r", required=True)
    p.add_argument("--n-rays", type=int)

    p = add("reconstruct", cmd_reconstruct, "d/r fields -> polygon proposals (JSON)")
    p.add_argument("--d", required=True)
    p.add_argument("--r", required=True)
    p.add_argument("--prob-thresh", type=float)
    p.add_argument("--nms-thresh", type=float)
    p.add_argument("--nms", action="store_true", help="keep only proposals surviving NMS")
    p.add_argument("--out")

    p = add("nms", cmd_nms, "d/r fields -> predicted label mask")
    p.add_argument("--d", required=True)
    p.add_argument("--r", required=True)
    p.add_argument("--prob-thresh", type=float)
    p.add_argument("--nms-thresh", type=float)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "mask pairs -> metric report")
    p.add_argument("--gt", action="append", required=True, help="inner (or only) category ground truth")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--gt-outer", action="append")
    p.add_argument("--pred-outer", action="append")
    p.add_argument("--taus", help="comma-separated thresholds")
    p.add_argument("--nesting", choices=["one-to-one", "one-to-many"])
    p.add_argument("--aggregation", choices=["per-image-mean", "pooled"])
    p.add_argument("--outer-policy", choices=["any", "all"])
    p.add_argument("--format", dest="output_format", choices=["csv", "markdown", "json"])
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    _add_loss_flags(p)

    p = add("penalty", cmd_penalty, "masks -> nesting penalty value")
    p.add_argument("--pred-inner", required=True)
    p.add_argument("--pred-outer", required=True)
    p.add_argument("--gt-outer", required=True)
    p.add_argument("--pred-inner2")
    p.add_argument("--gt-inner")
    p.add_argument("--kind", choices=["wbr", "exclusive", "overlap"], default="wbr")
    p.add_argument("--out")
    _add_loss_flags(p)

    p = add("synth", cmd_synth, "scene spec -> nested ground-truth files")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["sseg", "png"], default="sseg")
    p.add_argument("--out-dir", required=True)

    p = add("demo-fit", cmd_demo_fit, "toy field fit with and without the within-boundary penalty")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--reduction", choices=["sum", "mean"])
    p.add_argument("--out-dir", required=True)
    _add_loss_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"nestseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
