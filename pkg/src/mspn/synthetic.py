"""Procedural stick-figure dataset with exact keypoint ground truth.

Each image holds one figure: a torso segment, four limbs and a coloured
disk at every joint (head red, hands green, feet blue). Left and right
share a colour and are told apart by side: the figure faces the viewer,
so its left limbs always end on the image-right of the torso. That rule
survives a horizontal mirror with left/right relabelling, which keeps flip
augmentation and flip testing consistent.

Joints sit on pixel centres, so the pixel under an annotated coordinate
always carries that joint's colour.
"""
from __future__ import annotations

from pathlib import Path
from typing import Tuple

import cv2
import numpy as np

from .data_io import DatasetManifest, ImageInfo, PoseInstance, write_image
from .geometry import BoundingBox, KeypointSet
from .skeletons import get_skeleton

JOINT_COLORS = (
    (230, 40, 40),    # head
    (40, 220, 60),    # left hand
    (40, 220, 60),    # right hand
    (50, 110, 255),   # left foot
    (50, 110, 255),   # right foot
)
LIMB_COLOR = (235, 235, 235)
BACKGROUND = 48
HEAD_RADIUS = 7
JOINT_RADIUS = 5
MARGIN = 10
BOX_PAD = 12


def _direction(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([np.cos(a), np.sin(a)])


def _sample_pose(rng: np.random.Generator, size: Tuple[int, int]):
    """Joint pixel indices (5, 2) plus neck/hip anchors; redrawn until it fits."""
    W, H = size
    while True:
        torso = rng.uniform(50, 80)
        tilt = rng.uniform(-15, 15)
        centre = np.array([rng.uniform(0.4, 0.6) * W, rng.uniform(0.42, 0.58) * H])
        axis = _direction(90 + tilt)  # points down the body
        neck = centre - 0.5 * torso * axis
        hip = centre + 0.5 * torso * axis
        head_len = rng.uniform(18, 28)
        head = neck - head_len * axis
        # image y grows downward; angles measured from +x towards +y
        r_hand = neck + rng.uniform(35, 60) * _direction(rng.uniform(115, 245))
        l_hand = neck + rng.uniform(35, 60) * _direction(rng.uniform(-65, 65))
        r_foot = hip + rng.uniform(50, 75) * _direction(rng.uniform(98, 145))
        l_foot = hip + rng.uniform(50, 75) * _direction(rng.uniform(35, 82))
        joints = np.floor(np.stack([head, l_hand, r_hand, l_foot, r_foot])).astype(np.int64)
        inside = np.all((joints >= MARGIN) & (joints < np.array([W, H]) - MARGIN))
        d = np.linalg.norm(joints[:, None] - joints[None], axis=-1)
        apart = np.all(d[np.triu_indices(5, 1)] > 2 * HEAD_RADIUS + 2)
        if inside and apart and l_hand[0] > neck[0] and r_hand[0] < neck[0]:
            return joints, np.floor(neck).astype(np.int64), np.floor(hip).astype(np.int64), head_len


def render_figure(rng: np.random.Generator, size: Tuple[int, int] = (192, 256)):
    """Returns (rgb image (H, W, 3) uint8, joint coords (5, 2), head size)."""
    W, H = size
    img = np.full((H, W, 3), BACKGROUND, dtype=np.int16)
    img += rng.integers(-8, 9, size=(H, W, 1), dtype=np.int16)
    img = np.clip(img, 0, 255).astype(np.uint8)
    joints, neck, hip, head_len = _sample_pose(rng, size)
    pt = lambda p: (int(p[0]), int(p[1]))  # noqa: E731
    cv2.line(img, pt(neck), pt(hip), LIMB_COLOR, 3, cv2.LINE_8)
    cv2.line(img, pt(neck), pt(joints[0]), LIMB_COLOR, 3, cv2.LINE_8)
    for j, anchor in ((1, neck), (2, neck), (3, hip), (4, hip)):
        cv2.line(img, pt(anchor), pt(joints[j]), LIMB_COLOR, 3, cv2.LINE_8)
    for j, p in enumerate(joints):
        r = HEAD_RADIUS if j == 0 else JOINT_RADIUS
        cv2.circle(img, pt(p), r, JOINT_COLORS[j], -1, cv2.LINE_8)
    return img, joints.astype(np.float64) + 0.5, float(head_len)


def make_synthetic(n_images: int, seed: int, out_dir, size: Tuple[int, int] = (192, 256)) -> DatasetManifest:
    """Render ``n_images`` figures into ``out_dir`` (PNG + ``annotations.json``)."""
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    skeleton = get_skeleton("synthetic5")
    W, H = size
    images, instances = {}, []
    for i in range(1, n_images + 1):
        img, coords, head_size = render_figure(rng, size)
        name = f"{i:06d}.png"
        write_image(out / "images" / name, img)
        images[i] = ImageInfo(i, name, W, H)
        x0, y0 = np.maximum(coords.min(axis=0) - BOX_PAD, 0)
        x1, y1 = np.minimum(coords.max(axis=0) + BOX_PAD, (W, H))
        box = BoundingBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))
        kps = KeypointSet(coords, np.full(len(coords), 2))
        instances.append(PoseInstance(i, box, kps, box.area, False, i, head_size))
    manifest = DatasetManifest(images, instances, skeleton, "synthetic", str(out / "images"))
    manifest.save(out / "annotations.json")
    return manifest
