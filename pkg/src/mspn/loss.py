"""Multi-stage, multi-scale heatmap supervision.

Every head gets a masked L2 loss. On the finest scale of each stage the
plain joint mean is replaced by online hard keypoint mining: the mean of
the ``top_k`` largest per-joint losses, chosen independently per sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from .config import SupervisionConfig
from .exceptions import ConfigError, InvalidInputError


@dataclass
class LossReport:
    total: torch.Tensor
    per_stage_per_scale: np.ndarray  # (S, n_scales), weighted terms
    ohkm_selected: List[np.ndarray]  # per stage: (B, top_k) joint indices

    def stage_totals(self) -> np.ndarray:
        return self.per_stage_per_scale.sum(axis=1)


def l2_heatmap(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-joint mean squared error over cells; masked-off joints give exactly 0.

    Accepts (J, h, w) or (B, J, h, w) with mask (J,) or (B, J); returns
    (J,) or (B, J).
    """
    if pred.shape != target.shape:
        raise InvalidInputError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.ndim not in (3, 4):
        raise InvalidInputError(f"expected (J, h, w) or (B, J, h, w), got {tuple(pred.shape)}")
    mask = torch.as_tensor(mask, device=pred.device)
    if tuple(mask.shape) != tuple(pred.shape[:-2]):
        raise InvalidInputError(f"mask shape {tuple(mask.shape)} does not match {tuple(pred.shape[:-2])}")
    per_joint = ((pred - target) ** 2).flatten(-2).mean(-1)
    return torch.where(mask.bool(), per_joint, torch.zeros_like(per_joint))


def ohkm_select(per_joint: torch.Tensor, top_k: int) -> torch.Tensor:
    """Indices of the ``top_k`` largest losses along the last axis; ties go to the lower index."""
    J = per_joint.shape[-1]
    if not 1 <= top_k <= J:
        raise ConfigError(f"ohkm top_k={top_k} must lie in [1, {J}]")
    order = torch.sort(per_joint.detach(), dim=-1, descending=True, stable=True).indices
    return order[..., :top_k]


def ohkm(per_joint: torch.Tensor, top_k: int) -> torch.Tensor:
    """Mean of the ``top_k`` hardest joint losses (per row if batched)."""
    idx = ohkm_select(per_joint, top_k)
    return torch.gather(per_joint, -1, idx).mean(-1)


def total_loss(heads: Sequence[Sequence[torch.Tensor]], targets: Sequence[Sequence[torch.Tensor]],
               masks: torch.Tensor, cfg: SupervisionConfig) -> LossReport:
    """Weighted sum over stages and scales, averaged over the batch.

    ``heads[s][k]`` and ``targets[s][k]`` are (B, J, h, w); ``masks`` is (B, J)
    (shared by all stages) or (S, B, J).
    """
    S = len(heads)
    if len(targets) != S:
        raise InvalidInputError(f"{S} predicted stages but {len(targets)} target stages")
    if S != cfg.num_stages:
        raise InvalidInputError(f"{S} stages but supervision configures {cfg.num_stages}")
    masks = torch.as_tensor(masks, device=heads[0][0].device)
    n_scales = len(cfg.scales)
    terms = []
    selected = []
    for s in range(S):
        if len(heads[s]) != n_scales or len(targets[s]) != n_scales:
            raise InvalidInputError(f"stage {s}: expected {n_scales} scales")
        mask = masks[s] if masks.ndim == 3 else masks
        row = []
        for k in range(n_scales):
            per_joint = l2_heatmap(heads[s][k], targets[s][k], mask)
            if k == 0:
                idx = ohkm_select(per_joint, cfg.ohkm_top_k)
                per_sample = torch.gather(per_joint, -1, idx).mean(-1)
                selected.append(idx.cpu().numpy())
            else:
                per_sample = per_joint.mean(-1)
            w = cfg.stage_weight(s) * cfg.scale_weights[k]
            row.append(w * per_sample.mean())
        terms.append(row)
    total = sum(t for row in terms for t in row)
    table = np.array([[float(t.detach()) for t in row] for row in terms])
    return LossReport(total, table, selected)
