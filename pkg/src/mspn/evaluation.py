"""Keypoint metrics: OKS-based AP/AR (COCO protocol) and PCKh (MPII protocol)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .geometry import KeypointSet

OKS_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 2)
AREA_RANGES = {
    "all": (0.0, 1e10),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}
MAX_DETS = 20


def oks(pred, gt: KeypointSet, area: float, k_consts) -> Optional[float]:
    """Object keypoint similarity over the labelled ground-truth joints.

    ``pred`` is a (J, 2) array or a :class:`KeypointSet`. Returns ``None``
    when the ground truth has no labelled joint.
    """
    if area <= 0:
        raise ValueError(f"area must be positive, got {area}")
    coords = pred.coords if isinstance(pred, KeypointSet) else np.asarray(pred, dtype=np.float64)
    lab = gt.labelled
    if not lab.any():
        return None
    k = np.asarray(k_consts, dtype=np.float64)[lab]
    d2 = np.sum((coords[lab] - gt.coords[lab]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * area * k ** 2))))


def keypoint_extent_area(coords) -> float:
    """Area of the keypoints' bounding box; what COCO assigns to keypoint detections."""
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    span = c.max(axis=0) - c.min(axis=0)
    return float(span[0] * span[1])


@dataclass
class MatchRecord:
    image_id: int
    pred_idx: int
    gt_idx: int
    oks: float
    threshold: float


@dataclass
class EvalReport:
    """Metric values; ``None`` marks a metric with no eligible ground truth."""

    ap: Optional[float] = None
    ap50: Optional[float] = None
    ap75: Optional[float] = None
    ap_medium: Optional[float] = None
    ap_large: Optional[float] = None
    ar: Optional[float] = None
    ar50: Optional[float] = None
    ar75: Optional[float] = None
    ar_medium: Optional[float] = None
    ar_large: Optional[float] = None
    pckh_per_joint: Dict[str, float] = field(default_factory=dict)
    pckh_groups: Dict[str, float] = field(default_factory=dict)
    pckh_mean: Optional[float] = None
    pckh_skipped: int = 0
    pck: Dict[float, float] = field(default_factory=dict)  # pixel threshold -> rate
    matches: List[MatchRecord] = field(default_factory=list)

    def metrics(self) -> Dict[str, float]:
        out = {}
        for key in ("ap", "ap50", "ap75", "ap_medium", "ap_large",
                    "ar", "ar50", "ar75", "ar_medium", "ar_large", "pckh_mean"):
            val = getattr(self, key)
            if val is not None:
                out[key] = float(val)
        for name, val in self.pckh_per_joint.items():
            out[f"pckh.{name}"] = float(val)
        for name, val in self.pckh_groups.items():
            out[f"pckh_group.{name}"] = float(val)
        for px, val in self.pck.items():
            out[f"pck@{px:g}px"] = float(val)
        return out


# -- COCO-style AP -----------------------------------------------------------

def _gt_fields(gt):
    kps = gt.keypoints
    return kps, float(gt.area), bool(getattr(gt, "iscrowd", False))


def _pred_fields(pred):
    return np.asarray(pred.coords, dtype=np.float64), float(pred.pose_score)


@dataclass
class _ImageEval:
    dt_scores: np.ndarray      # (D,)
    dt_matches: np.ndarray     # (T, D) matched gt index or -1
    dt_ignore: np.ndarray      # (T, D) bool
    gt_ignore: np.ndarray      # (G,) bool
    dt_order: np.ndarray       # (D,) original prediction indices
    oks: np.ndarray            # (D, G) in dt_order / original gt order


def oks_matrix(preds, gts, k_consts) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for g, gt in enumerate(gts):
        kps, area, _ = _gt_fields(gt)
        for d, pred in enumerate(preds):
            val = oks(_pred_fields(pred)[0], kps, area, k_consts)
            out[d, g] = 0.0 if val is None else val
    return out


def _evaluate_image(preds, gts, k_consts, area_rng, thresholds, max_dets) -> Optional[_ImageEval]:
    if not preds and not gts:
        return None
    scores = np.array([_pred_fields(p)[1] for p in preds], dtype=np.float64)
    dt_order = np.argsort(-scores, kind="mergesort")[:max_dets]
    preds_sorted = [preds[i] for i in dt_order]

    gt_ig = np.zeros(len(gts), dtype=bool)
    crowd = np.zeros(len(gts), dtype=bool)
    for g, gt in enumerate(gts):
        kps, area, iscrowd = _gt_fields(gt)
        crowd[g] = iscrowd
        gt_ig[g] = iscrowd or kps.num_labelled() == 0 or area < area_rng[0] or area > area_rng[1]
    # non-ignored ground truth first; stable so ties keep input order
    g_order = np.argsort(gt_ig, kind="mergesort")
    ious = oks_matrix(preds_sorted, gts, k_consts)

    T, D, G = len(thresholds), len(preds_sorted), len(gts)
    dtm = -np.ones((T, D), dtype=np.int64)
    dt_ig = np.zeros((T, D), dtype=bool)
    gtm = np.zeros((T, G), dtype=bool)
    for t, thr in enumerate(thresholds):
        for d in range(D):
            best = min(thr, 1 - 1e-10)
            m = -1
            for g in g_order:
                if gtm[t, g] and not crowd[g]:
                    continue
                if m > -1 and not gt_ig[m] and gt_ig[g]:
                    break
                if ious[d, g] < best:
                    continue
                best = ious[d, g]
                m = g
            if m == -1:
                continue
            dtm[t, d] = m
            dt_ig[t, d] = gt_ig[m]
            gtm[t, m] = True
    # unmatched detections outside the area range are ignored
    for d, pred in enumerate(preds_sorted):
        a = keypoint_extent_area(_pred_fields(pred)[0])
        if a < area_rng[0] or a > area_rng[1]:
            dt_ig[:, d] |= dtm[:, d] == -1
    return _ImageEval(scores[dt_order], dtm, dt_ig, gt_ig, dt_order, ious)


def _accumulate(evals: List[_ImageEval], n_thresholds: int):
    """Returns (precision (T, R) or None, recall (T,) or None)."""
    evals = [e for e in evals if e is not None]
    npig = int(sum(np.count_nonzero(~e.gt_ignore) for e in evals))
    if npig == 0:
        return None, None
    if evals:
        scores = np.concatenate([e.dt_scores for e in evals])
        dtm = np.concatenate([e.dt_matches for e in evals], axis=1)
        dt_ig = np.concatenate([e.dt_ignore for e in evals], axis=1)
    else:
        scores = np.zeros(0)
        dtm = np.zeros((n_thresholds, 0), dtype=np.int64)
        dt_ig = np.zeros((n_thresholds, 0), dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    dtm, dt_ig = dtm[:, order], dt_ig[:, order]
    tps = (dtm >= 0) & ~dt_ig
    fps = (dtm < 0) & ~dt_ig
    R = len(RECALL_THRESHOLDS)
    precision = np.zeros((n_thresholds, R))
    recall = np.zeros(n_thresholds)
    for t in range(n_thresholds):
        tp = np.cumsum(tps[t]).astype(np.float64)
        fp = np.cumsum(fps[t]).astype(np.float64)
        nd = len(tp)
        if nd == 0:
            continue
        rc = tp / npig
        denom = tp + fp
        pr = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
        recall[t] = rc[-1]
        pr = np.maximum.accumulate(pr[::-1])[::-1]
        inds = np.searchsorted(rc, RECALL_THRESHOLDS, side="left")
        valid = inds < nd
        precision[t, valid] = pr[inds[valid]]
    return precision, recall


def coco_ap(preds: Mapping[int, Sequence], gts: Mapping[int, Sequence], k_consts,
            thresholds=OKS_THRESHOLDS, max_dets: int = MAX_DETS) -> EvalReport:
    """OKS AP/AR over images.

    ``preds[image_id]`` holds objects with ``coords`` (J, 2) and ``pose_score``;
    ``gts[image_id]`` holds objects with ``keypoints`` (:class:`KeypointSet`),
    ``area`` and optional ``iscrowd``. Images present on one side only are
    evaluated against an empty other side.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    image_ids = sorted(set(gts) | set(preds))
    report = EvalReport()
    per_range = {}
    for rng_name, rng in AREA_RANGES.items():
        evals = [_evaluate_image(list(preds.get(i, [])), list(gts.get(i, [])), k_consts, rng,
                                 thresholds, max_dets) for i in image_ids]
        per_range[rng_name] = _accumulate(evals, len(thresholds))
        if rng_name == "all":
            for img, ev in zip(image_ids, evals):
                if ev is None:
                    continue
                for t, thr in enumerate(thresholds):
                    for d in range(ev.dt_matches.shape[1]):
                        g = int(ev.dt_matches[t, d])
                        report.matches.append(MatchRecord(
                            int(img), int(ev.dt_order[d]), g,
                            float(ev.oks[d, g]) if g >= 0 else float(ev.oks[d].max(initial=0.0)),
                            float(thr)))

    def t_index(value):
        hits = np.flatnonzero(np.isclose(thresholds, value))
        return int(hits[0]) if hits.size else None

    prec, rec = per_range["all"]
    if prec is not None:
        ap_t = prec.mean(axis=1)
        report.ap = float(ap_t.mean())
        report.ar = float(rec.mean())
        i50, i75 = t_index(0.5), t_index(0.75)
        if i50 is not None:
            report.ap50, report.ar50 = float(ap_t[i50]), float(rec[i50])
        if i75 is not None:
            report.ap75, report.ar75 = float(ap_t[i75]), float(rec[i75])
    for name in ("medium", "large"):
        prec, rec = per_range[name]
        if prec is not None:
            setattr(report, f"ap_{name}", float(prec.mean()))
            setattr(report, f"ar_{name}", float(rec.mean()))
    return report


def ap_per_threshold(preds, gts, k_consts, thresholds=OKS_THRESHOLDS, max_dets: int = MAX_DETS):
    """AP at each OKS threshold (area range 'all'); ``None`` if undefined."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    image_ids = sorted(set(gts) | set(preds))
    evals = [_evaluate_image(list(preds.get(i, [])), list(gts.get(i, [])), k_consts, AREA_RANGES["all"],
                             thresholds, max_dets) for i in image_ids]
    prec, _ = _accumulate(evals, len(thresholds))
    return None if prec is None else prec.mean(axis=1)


# -- PCKh --------------------------------------------------------------------

@dataclass
class PCKhResult:
    per_joint: np.ndarray          # (J,), nan where a joint was never labelled
    counts: np.ndarray             # (J,) labelled joints evaluated
    groups: Dict[str, float]
    mean: Optional[float]
    skipped: int


def pckh(preds: Sequence, gts: Sequence[KeypointSet], head_sizes: Sequence[Optional[float]],
         alpha: float = 0.5, groups: Optional[Mapping[str, Sequence[int]]] = None) -> PCKhResult:
    """Fraction of labelled joints within ``alpha * head_size`` (inclusive).

    Instances without a positive head size are skipped and counted. With
    ``groups`` the overall mean runs over the union of the grouped joints
    (the MPII convention that leaves out pelvis and thorax).
    """
    if not (len(preds) == len(gts) == len(head_sizes)):
        raise ValueError("preds, gts and head_sizes must have equal length")
    J = gts[0].num_joints if gts else 0
    correct = np.zeros(J)
    counts = np.zeros(J)
    skipped = 0
    for pred, gt, hs in zip(preds, gts, head_sizes):
        if hs is None or not np.isfinite(hs) or hs <= 0:
            skipped += 1
            continue
        coords = pred.coords if hasattr(pred, "coords") else np.asarray(pred, dtype=np.float64)
        lab = gt.labelled
        dist = np.linalg.norm(np.asarray(coords, dtype=np.float64) - gt.coords, axis=1)
        counts += lab
        correct += lab & (dist <= alpha * hs)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_joint = np.where(counts > 0, correct / np.maximum(counts, 1), np.nan)
    group_rates = {}
    if groups:
        for name, ids in groups.items():
            ids = list(ids)
            n = counts[ids].sum()
            if n > 0:
                group_rates[name] = float(correct[ids].sum() / n)
        used = sorted({i for ids in groups.values() for i in ids})
    else:
        used = list(range(J))
    n = counts[used].sum() if J else 0
    mean = float(correct[used].sum() / n) if n > 0 else None
    return PCKhResult(per_joint, counts, group_rates, mean, skipped)


def pair_by_oks(preds: Sequence, gts: Sequence, k_consts) -> List[Optional[int]]:
    """One-to-one greedy pairing of gts to predictions of one image, best OKS first.

    Returns, per gt, the index of its prediction or ``None``.
    """
    out: List[Optional[int]] = [None] * len(gts)
    if not preds or not gts:
        return out
    sim = oks_matrix(preds, gts, k_consts)
    used = set()
    for flat in np.argsort(-sim, axis=None, kind="mergesort"):
        d, g = divmod(int(flat), len(gts))
        if d in used or out[g] is not None:
            continue
        out[g] = d
        used.add(d)
    return out


# -- files -------------------------------------------------------------------

def write_metrics(report: EvalReport, path) -> None:
    """Canonical metrics file: a JSON object with sorted keys."""
    Path(path).write_text(json.dumps(report.metrics(), indent=2, sort_keys=True) + "\n")


def read_metrics(path) -> Dict[str, float]:
    return json.loads(Path(path).read_text())


def write_audit_log(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "pred_idx", "gt_idx", "oks", "threshold"])
        for m in report.matches:
            w.writerow([m.image_id, m.pred_idx, m.gt_idx, repr(m.oks), repr(m.threshold)])
