"""File-level workflows behind the command line: train, infer, evaluate, flops, make-synth."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .config import RunConfig
from .data_io import (DatasetManifest, DetectionFile, gt_boxes, load_coco_keypoints, load_detections,
                      read_predictions, write_predictions)
from .engine import Trainer, TrainResult, load_model, predict
from .evaluation import EvalReport, coco_ap, pair_by_oks, pckh, write_audit_log, write_metrics
from .exceptions import ConfigError, SchemaError
from .flops import FlopsReport, estimate_flops
from .synthetic import make_synthetic

log = logging.getLogger(__name__)


def _manifest(ann: Optional[str], images: Optional[str], what: str) -> DatasetManifest:
    if not ann:
        raise ConfigError(f"data.{what}_ann is not set")
    return load_coco_keypoints(ann, images)


def train(cfg: RunConfig, resume=None, output_dir=None) -> TrainResult:
    manifest = _manifest(cfg.data.train_ann, cfg.data.train_images, "train")
    return Trainer(cfg, manifest, output_dir).run(resume)


def eval_manifest(cfg: RunConfig) -> DatasetManifest:
    """Validation annotations, falling back to the training set."""
    if cfg.data.val_ann:
        return _manifest(cfg.data.val_ann, cfg.data.val_images, "val")
    return _manifest(cfg.data.train_ann, cfg.data.train_images, "train")


def infer(cfg: RunConfig, ckpt, boxes: Union[str, DetectionFile] = "gt", flip_test: Optional[bool] = None,
          out_path=None, manifest: Optional[DatasetManifest] = None) -> Path:
    """Predict keypoints for every box and write a COCO results file."""
    manifest = manifest or eval_manifest(cfg)
    if isinstance(boxes, DetectionFile):
        dets = boxes
    elif boxes == "gt":
        dets = gt_boxes(manifest)
    else:
        dets = load_detections(boxes, cfg.inference.det_top_n, cfg.inference.det_min_score)
    model = load_model(ckpt, cfg)
    results, skipped = predict(model, cfg, manifest, dets, flip_test)
    out = Path(out_path or Path(cfg.output_dir) / "predictions.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(results, out)
    log.info("wrote %d predictions to %s (%d images skipped)", len(results), out, skipped)
    return out


def evaluate(pred_path, ann, out_dir=None, pck_thresholds_px: Sequence[float] = (),
             image_root: Optional[str] = None) -> EvalReport:
    """Score a results file against annotations; writes metrics.json and audit.csv to ``out_dir``."""
    manifest = ann if isinstance(ann, DatasetManifest) else load_coco_keypoints(ann, image_root)
    sk = manifest.skeleton
    preds = read_predictions(pred_path, sk.num_joints)
    orphans = sorted(set(preds) - set(manifest.images))
    if orphans:
        raise SchemaError(f"predictions reference image ids absent from the annotations: {orphans}")
    gts = manifest.by_image()
    report = coco_ap(preds, gts, sk.k_consts)

    paired_pred, paired_gt, head_sizes = [], [], []
    J = sk.num_joints
    for image_id, insts in gts.items():
        insts = [x for x in insts if not x.iscrowd and x.keypoints.num_labelled() > 0]
        cands = preds.get(image_id, [])
        for inst, d in zip(insts, pair_by_oks(cands, insts, sk.k_consts)):
            paired_pred.append(cands[d].coords if d is not None else np.full((J, 2), np.nan))
            paired_gt.append(inst.keypoints)
            head_sizes.append(inst.head_size)
    if any(h is not None for h in head_sizes):
        res = pckh(paired_pred, paired_gt, head_sizes, 0.5, sk.pckh_groups or None)
        report.pckh_per_joint = {name: float(v) for name, v in zip(sk.joints, res.per_joint) if np.isfinite(v)}
        report.pckh_groups = res.groups
        report.pckh_mean = res.mean
        report.pckh_skipped = res.skipped
    for px in pck_thresholds_px:
        res = pckh(paired_pred, paired_gt, [float(px)] * len(paired_gt), 1.0)
        if res.mean is not None:
            report.pck[float(px)] = res.mean

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(report, out / "metrics.json")
        write_audit_log(report, out / "audit.csv")
    return report


def flops(cfg: RunConfig) -> FlopsReport:
    return estimate_flops(cfg.network)


def flops_summary(cfg: RunConfig) -> Dict[str, float]:
    rep = estimate_flops(cfg.network)
    return {"num_stages": cfg.network.num_stages, "macs": rep.macs, "2*macs": 2 * rep.macs,
            "flops_with_elementwise": rep.flops, "gmacs": rep.macs / 1e9, "gflops_2macs": 2 * rep.macs / 1e9}


def synth(n: int, seed: int, out_dir) -> DatasetManifest:
    return make_synthetic(n, seed, out_dir)
