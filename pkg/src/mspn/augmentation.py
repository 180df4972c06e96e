"""Training-time geometric augmentation composed into one affine per sample."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .config import AugmentConfig
from .geometry import (AffineTransform, BoundingBox, KeypointSet, box_from_points, crop_transform,
                       expand_to_aspect, transform_keypoints)
from .skeletons import Skeleton


def _half_ids(cfg: AugmentConfig, skeleton: Optional[Skeleton]):
    upper = cfg.upper_joint_ids if cfg.upper_joint_ids is not None else (skeleton.upper if skeleton else ())
    lower = cfg.lower_joint_ids if cfg.lower_joint_ids is not None else (skeleton.lower if skeleton else ())
    return np.asarray(upper, dtype=np.int64), np.asarray(lower, dtype=np.int64)


def flip_keypoints(kps: KeypointSet, width: float, swap_pairs: Sequence[Tuple[int, int]]) -> KeypointSet:
    """Mirror ``x -> width - x`` and swap left/right ids."""
    mirrored = transform_keypoints(kps, AffineTransform.hflip(width))
    perm = np.arange(kps.num_joints)
    for a, b in swap_pairs:
        perm[a], perm[b] = b, a
    return KeypointSet(mirrored.coords[perm], mirrored.vis[perm])


def half_body_box(kps: KeypointSet, ids: np.ndarray, score: float = 1.0) -> Optional[BoundingBox]:
    sel = ids[kps.vis[ids] > 0] if ids.size else ids
    if sel.size < 2:
        return None
    return box_from_points(kps.coords[sel], score)


def sample_augment(inst, cfg: AugmentConfig, rng: np.random.Generator,
                   skeleton: Optional[Skeleton] = None, input_size: Tuple[int, int] = (192, 256),
                   aspect_ratio: float = 4.0 / 3.0, padding: float = 1.0):
    """Draw one augmentation for ``inst`` (anything with ``bbox`` and ``keypoints``).

    Returns ``(transform, keypoints, flipped)`` where ``transform`` maps
    image to network-input coordinates and ``keypoints`` are already mapped
    (flipped ids swapped, joints leaving the frame unlabelled).

    Exactly five uniforms are consumed per call whatever branches fire, so
    the stream position depends only on how many samples were drawn.
    """
    box, kps = inst.bbox, inst.keypoints
    u_half, u_side, u_rot, u_scale, u_flip = rng.random(5)
    W, H = input_size

    crop_box = box
    if kps.num_labelled() > cfg.half_body_min_joints and u_half < cfg.half_body_prob:
        upper, lower = _half_ids(cfg, skeleton)
        hb = half_body_box(kps, upper if u_side < 0.5 else lower, box.score)
        if hb is not None:
            crop_box = hb
    crop_box = expand_to_aspect(crop_box, aspect_ratio, padding)

    rot_lo, rot_hi = cfg.rot_range_deg
    sc_lo, sc_hi = cfg.scale_range
    rotation = rot_lo + (rot_hi - rot_lo) * u_rot
    scale = sc_lo + (sc_hi - sc_lo) * u_scale
    flipped = bool(u_flip < cfg.flip_prob)

    T = crop_transform(crop_box, W, H, rotation, scale, flipped)
    out = transform_keypoints(kps, T)
    coords, vis = out.coords, out.vis.copy()
    if flipped:
        pairs = skeleton.flip_pairs if skeleton is not None else ()
        perm = np.arange(kps.num_joints)
        for a, b in pairs:
            perm[a], perm[b] = b, a
        coords, vis = coords[perm], vis[perm]
    inside = (coords[:, 0] >= 0) & (coords[:, 0] < W) & (coords[:, 1] >= 0) & (coords[:, 1] < H)
    vis[~inside] = 0
    return T, KeypointSet(coords, vis), flipped


def draw_parameters(cfg: AugmentConfig, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation and scale draws exactly as ``sample_augment`` makes them (for range audits)."""
    u = rng.random((n, 5))
    rot_lo, rot_hi = cfg.rot_range_deg
    sc_lo, sc_hi = cfg.scale_range
    return rot_lo + (rot_hi - rot_lo) * u[:, 2], sc_lo + (sc_hi - sc_lo) * u[:, 3]
