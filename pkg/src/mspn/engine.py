"""Training loop and top-down inference."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .augmentation import sample_augment
from .codec import PoseResult, decode, encode_targets, flip_average
from .config import RunConfig
from .data_io import DatasetManifest, DetectionFile, ImageCache, PoseInstance
from .exceptions import ConfigError, InvalidInputError, TrainingDivergedError
from .geometry import crop_transform, expand_to_aspect, warp_image
from .loss import total_loss
from .network import MSPN, build, final_prediction, load_checkpoint, model_from_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

PIXEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
PIXEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def to_tensor(crops: Sequence[np.ndarray]) -> torch.Tensor:
    """Stack RGB uint8 crops (H, W, 3) into a normalised (B, 3, H, W) float tensor."""
    arr = np.stack([np.asarray(c, dtype=np.float32) / 255.0 for c in crops])
    arr = (arr - PIXEL_MEAN) / PIXEL_STD
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


class EpochSampler:
    """Instance indices in reshuffled passes, drawn from the shared generator."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise InvalidInputError("training set is empty")
        self.n, self.rng = n, rng
        self.order: List[int] = []

    def take(self, k: int) -> List[int]:
        out = []
        while len(out) < k:
            if not self.order:
                self.order = list(self.rng.permutation(self.n))
            out.append(int(self.order.pop(0)))
        return out

    def state(self) -> dict:
        return {"order": list(self.order)}

    def restore(self, state: dict) -> None:
        self.order = [int(i) for i in state.get("order", [])]


@dataclass
class Batch:
    images: torch.Tensor
    targets: List[List[torch.Tensor]]  # [stage][scale] (B, J, h, w)
    masks: torch.Tensor                # (S, B, J)
    instance_ids: List[int]


def make_batch(instances: Sequence[PoseInstance], cache: ImageCache, cfg: RunConfig,
               rng: np.random.Generator) -> Batch:
    W, H = cfg.input_size
    skeleton = cache.manifest.skeleton
    S = cfg.network.num_stages
    crops, per_stage, masks = [], [[] for _ in range(S)], [[] for _ in range(S)]
    for inst in instances:
        img = cache.get(inst.image_id)
        if img is None:
            raise InvalidInputError(f"image {inst.image_id} ({cache.manifest.image_path(inst.image_id)}) unreadable")
        T, kps, _ = sample_augment(inst, cfg.augment, rng, skeleton, (W, H),
                                   cfg.data.aspect_ratio, cfg.data.bbox_padding)
        crops.append(warp_image(img, T, (W, H)))
        for s in range(S):
            pyr = encode_targets(kps, cfg.supervision, s, (W, H))
            per_stage[s].append(pyr.maps)
            masks[s].append(pyr.mask)
    targets = [[torch.from_numpy(np.stack([m[k] for m in per_stage[s]])) for k in range(len(cfg.supervision.scales))]
               for s in range(S)]
    return Batch(to_tensor(crops), targets, torch.from_numpy(np.array(masks, dtype=bool)),
                 [inst.id for inst in instances])


@dataclass
class TrainResult:
    checkpoint: Path
    loss_csv: Path
    iterations_run: int
    history: List[Dict[str, float]] = field(default_factory=list)


def _grad_norms(model: MSPN) -> Dict[str, float]:
    norms: Dict[str, float] = {}
    for name, p in model.named_parameters():
        if p.grad is not None:
            key = name.split(".", 1)[0]
            norms[key] = norms.get(key, 0.0) + float(p.grad.detach().double().pow(2).sum())
    return {k: float(np.sqrt(v)) for k, v in norms.items()}


class Trainer:
    """Single-device loop: sample, augment, encode, forward, loss, Adam step."""

    def __init__(self, cfg: RunConfig, manifest: DatasetManifest, output_dir=None):
        if manifest.skeleton.num_joints != cfg.network.num_joints:
            raise ConfigError(f"dataset has {manifest.skeleton.num_joints} joints, "
                              f"network.num_joints={cfg.network.num_joints}")
        self.cfg = cfg
        self.manifest = manifest
        self.instances = [x for x in manifest.instances if not x.iscrowd and x.keypoints.num_labelled() > 0]
        self.out = Path(output_dir or cfg.output_dir)
        self.cache = ImageCache(manifest)

    @property
    def loss_csv(self) -> Path:
        return self.out / "loss.csv"

    def _optimizer(self, model):
        oc = self.cfg.optimizer
        return torch.optim.Adam(model.parameters(), lr=oc.lr_start, weight_decay=oc.weight_decay)

    def run(self, resume=None) -> TrainResult:
        cfg, oc = self.cfg, self.cfg.optimizer
        self.out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(cfg.seed if cfg.augment.seed is None else cfg.augment.seed)
        sampler = EpochSampler(len(self.instances), rng)
        model = build(cfg.network, cfg.seed)
        optim = self._optimizer(model)
        start = 0
        if resume is not None:
            payload = load_checkpoint(resume)
            model.load_state_dict(payload["state_dict"])
            if payload.get("optimizer") is not None:
                optim.load_state_dict(payload["optimizer"])
            start = int(payload["iteration"])
            extra = payload.get("extra") or {}
            if "rng" in extra:
                rng.bit_generator.state = extra["rng"]
            sampler.restore(extra.get("sampler", {}))
        header = ["iter", "lr", "total"] + [f"stage{s + 1}" for s in range(cfg.network.num_stages)]
        rows = self._read_rows(start) if resume is not None else []
        fh = open(self.loss_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        history: List[Dict[str, float]] = []
        model.train()
        try:
            for t in range(start, oc.iterations):
                lr = oc.lr_at(t)
                for group in optim.param_groups:
                    group["lr"] = lr
                instances = [self.instances[i] for i in sampler.take(oc.batch_per_device)]
                batch = make_batch(instances, self.cache, cfg, rng)
                heads = model(batch.images)
                report = total_loss(heads, batch.targets, batch.masks, cfg.supervision)
                optim.zero_grad(set_to_none=True)
                report.total.backward()
                total = float(report.total.detach())
                norms = _grad_norms(model)
                if not np.isfinite(total) or not all(np.isfinite(v) for v in norms.values()):
                    self._diverged(t, lr, batch, report, norms)
                optim.step()
                stage_terms = report.stage_totals()
                writer.writerow([t, repr(lr), repr(total)] + [repr(float(v)) for v in stage_terms])
                history.append({"iter": t, "lr": lr, "total": total})
                if (t + 1) % cfg.log_every == 0 or t == start:
                    log.info("iter %d lr %.3g loss %.6g", t, lr, total)
                if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
                    self._save(self.out / "checkpoints" / f"iter_{t + 1:07d}.pt", model, optim, t + 1, rng, sampler)
        finally:
            fh.close()
        final = self.out / "final.pt"
        self._save(final, model, optim, max(start, oc.iterations), rng, sampler)
        self.model = model
        return TrainResult(final, self.loss_csv, len(history), history)

    def _save(self, path, model, optim, iteration, rng, sampler):
        save_checkpoint(path, model, self.cfg, optim, iteration,
                        {"rng": rng.bit_generator.state, "sampler": sampler.state()})

    def _read_rows(self, upto: int) -> List[List[str]]:
        if not self.loss_csv.exists():
            return []
        with open(self.loss_csv, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return [r for r in rows if int(r[0]) < upto]

    def _diverged(self, t, lr, batch, report, norms):
        diag = {
            "iteration": t,
            "lr": lr,
            "instance_ids": batch.instance_ids,
            "loss_terms": report.per_stage_per_scale.tolist(),
            "grad_norms": norms,
        }
        path = self.out / "divergence.json"
        path.write_text(json.dumps(diag, indent=2, default=str))
        raise TrainingDivergedError(f"non-finite loss or gradient at iteration {t}; see {path}", diag)


# -- inference ---------------------------------------------------------------

def _forward_heatmaps(model: MSPN, crops: List[np.ndarray]) -> np.ndarray:
    with torch.no_grad():
        out = final_prediction(model(to_tensor(crops)))
    return out.double().numpy()


def predict(model: MSPN, cfg: RunConfig, manifest: DatasetManifest, boxes: DetectionFile,
            flip_test: Optional[bool] = None) -> Tuple[List[PoseResult], int]:
    """Top-down inference over every box; returns (results, images skipped as missing)."""
    ic = cfg.inference
    flip_test = ic.flip_test if flip_test is None else flip_test
    W, H = cfg.input_size
    pairs = manifest.skeleton.flip_pairs
    model.eval()
    cache = ImageCache(manifest, max_items=1)
    jobs = []
    skipped = 0
    for image_id in sorted(boxes.boxes):
        dets = boxes.boxes[image_id]
        if not dets:
            continue
        img = cache.get(image_id) if image_id in manifest.images else None
        if img is None:
            skipped += 1
            continue
        for box in dets:
            T = crop_transform(expand_to_aspect(box, cfg.data.aspect_ratio, cfg.data.bbox_padding), W, H)
            jobs.append((image_id, box, T, warp_image(img, T, (W, H))))
    if skipped:
        log.warning("skipped %d image(s) that could not be read", skipped)

    results = []
    for i in range(0, len(jobs), ic.batch_size):
        chunk = jobs[i:i + ic.batch_size]
        crops = [j[3] for j in chunk]
        hm = _forward_heatmaps(model, crops)
        if flip_test:
            hm_f = _forward_heatmaps(model, [np.ascontiguousarray(c[:, ::-1]) for c in crops])
            hm = flip_average(hm, hm_f, pairs)
        for (image_id, box, T, _), h in zip(chunk, hm):
            coords, scores = decode(h, T.inverse(), ic.blur_kernel, cfg.supervision.scales[0])
            results.append(PoseResult.from_decoded(coords, scores, box, image_id))
    return results, skipped


def load_model(ckpt_path, cfg: Optional[RunConfig] = None) -> MSPN:
    """Rebuild a network from a checkpoint, checking it against ``cfg.network``."""
    payload = load_checkpoint(ckpt_path)
    model = model_from_checkpoint(payload)
    if cfg is not None and model.cfg != cfg.network:
        raise ConfigError(f"checkpoint network config {model.cfg} does not match runtime {cfg.network}")
    model.eval()
    return model
