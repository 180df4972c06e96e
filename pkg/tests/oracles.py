"""Reference implementations written independently of the package code.

They favour the definition over speed: brute-force enumeration, explicit
loops, closed forms.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# -- OKS / AP ------------------------------------------------------------------

def oks_ref(pred, gt_xy, gt_vis, area, k):
    num, den = 0.0, 0
    for j in range(len(gt_vis)):
        if gt_vis[j] > 0:
            d2 = (pred[j][0] - gt_xy[j][0]) ** 2 + (pred[j][1] - gt_xy[j][1]) ** 2
            num += math.exp(-d2 / (2.0 * area * k[j] ** 2))
            den += 1
    return None if den == 0 else num / den


def _best_assignment(sim, thr):
    """Exhaustive search over injective partial assignments.

    Predictions are visited in rank order; an assignment is preferred when it
    gives an earlier prediction a higher similarity (lexicographic order);
    on exact ties the later gt wins, as in the COCO matcher. Returns the
    per-prediction gt index, or -1.
    """
    D, G = sim.shape
    best_key, best = None, None
    options = [-1] + list(range(G))
    for combo in itertools.product(options, repeat=D):
        used = [g for g in combo if g >= 0]
        if len(used) != len(set(used)):
            continue
        if any(g >= 0 and sim[d, g] < thr for d, g in enumerate(combo)):
            continue
        key = tuple((sim[d, g], g) if g >= 0 else (-1.0, 0) for d, g in enumerate(combo))
        if best_key is None or key > best_key:
            best_key, best = key, combo
    return list(best)


def ap_ref(scenes, k, thresholds):
    """scenes: list of (preds, gts); preds = [(coords, score)], gts = [(coords, vis, area)].

    Returns (mean AP, per-threshold AP). AP is the mean over 101 recall
    levels of the best precision reached at recall >= level.
    """
    per_t = []
    for thr in thresholds:
        flags = []  # (score, global order, is_tp)
        n_gt = 0
        order = 0
        for preds, gts in scenes:
            n_gt += len(gts)
            ranked = sorted(range(len(preds)), key=lambda i: -preds[i][1])
            sim = np.zeros((len(ranked), len(gts)))
            for a, i in enumerate(ranked):
                for g, (gxy, gv, area) in enumerate(gts):
                    v = oks_ref(preds[i][0], gxy, gv, area, k)
                    sim[a, g] = 0.0 if v is None else v
            match = _best_assignment(sim, min(thr, 1 - 1e-10)) if len(ranked) else []
            for a, i in enumerate(ranked):
                flags.append((preds[i][1], order, match[a] >= 0))
                order += 1
        flags.sort(key=lambda f: (-f[0], f[1]))
        tp = fp = 0
        pts = []
        for _, _, hit in flags:
            tp += hit
            fp += not hit
            pts.append((tp / n_gt, tp / (tp + fp)))
        levels = [r / 100 for r in range(101)]
        total = 0.0
        for r in levels:
            cands = [p for rc, p in pts if rc >= r - 1e-12]
            total += max(cands) if cands else 0.0
        per_t.append(total / len(levels))
    return float(np.mean(per_t)), per_t


# -- heatmaps ------------------------------------------------------------------

def gaussian_patch_ref(K):
    sigma = max(K / 3.0, 0.5)
    r = K // 2
    out = np.zeros((K, K))
    for i in range(K):
        for j in range(K):
            out[i, j] = math.exp(-((i - r) ** 2 + (j - r) ** 2) / (2 * sigma ** 2))
    return out / out.max()


def spatial_variance(m):
    """Second central moment of a non-negative map treated as a distribution."""
    m = np.asarray(m, dtype=np.float64)
    ys, xs = np.mgrid[0:m.shape[0], 0:m.shape[1]]
    w = m / m.sum()
    mx, my = (w * xs).sum(), (w * ys).sum()
    return float((w * ((xs - mx) ** 2 + (ys - my) ** 2)).sum())


# -- FLOPs ---------------------------------------------------------------------

def resnet50_backbone_macs(H, W, base=64):
    """Closed-form MACs of the ResNet-50 conv trunk (no classifier) at H x W."""
    macs = 7 * 7 * 3 * base * (H // 2) * (W // 2)
    h, w, cin = H // 4, W // 4, base
    for level, n in enumerate((3, 4, 6, 3)):
        planes = base * 2 ** level
        for b in range(n):
            s = 2 if b == 0 and level > 0 else 1
            ho, wo = h // s, w // s
            macs += cin * planes * h * w + 9 * planes * planes * ho * wo + planes * 4 * planes * ho * wo
            if b == 0:
                macs += cin * 4 * planes * ho * wo
            cin, h, w = 4 * planes, ho, wo
    return macs
