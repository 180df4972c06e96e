"""Gaussian heatmap targets and heatmap-to-keypoint decoding.

Heatmap cell ``(x, y)`` covers network-input pixels
``[stride*x, stride*(x+1)) x [stride*y, stride*(y+1))``; its continuous
heatmap coordinate is ``(x + 0.5, y + 0.5)`` and input coordinate is that
times ``stride``. A mirrored heatmap (array flip) therefore corresponds
exactly to a mirrored input crop.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .config import SupervisionConfig
from .exceptions import ConfigError, InvalidInputError
from .geometry import AffineTransform, BoundingBox, KeypointSet, apply_to_points

BASE_STRIDE = 4


def gaussian_sigma(kernel_size: int) -> float:
    return max(kernel_size / 3.0, 0.5)


def gaussian_kernel_1d(kernel_size: int) -> np.ndarray:
    """Unnormalised 1-D Gaussian of odd length with centre value 1."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel size must be odd and >= 1, got {kernel_size}")
    r = kernel_size // 2
    i = np.arange(-r, r + 1, dtype=np.float64)
    return np.exp(-(i ** 2) / (2.0 * gaussian_sigma(kernel_size) ** 2))


def gaussian_kernel_2d(kernel_size: int) -> np.ndarray:
    g = gaussian_kernel_1d(kernel_size)
    return np.outer(g, g)


def kernel_for_scale(kernel_size: int, stride: int, base_stride: int = BASE_STRIDE) -> int:
    """Shrink a finest-scale kernel by the stride ratio, rounded to the nearest odd >= 1.

    Exact ties between two odd sizes round up.
    """
    k = kernel_size * base_stride / stride
    n = int(np.floor((k - 1.0) / 2.0 + 0.5))
    return max(1, 2 * n + 1)


@dataclass
class HeatmapPyramid:
    """One heatmap tensor (J, H/stride, W/stride) per stride, finest first."""

    maps: List[np.ndarray]
    strides: Tuple[int, ...]
    mask: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, i):
        return self.maps[i]


def encode_targets(kps: KeypointSet, cfg: SupervisionConfig, stage: int,
                   input_size: Tuple[int, int], dtype=np.float32) -> HeatmapPyramid:
    """Target pyramid for one stage; ``kps`` already in network-input coordinates."""
    if not 0 <= stage < cfg.num_stages:
        raise InvalidInputError(f"stage {stage} out of range for {cfg.num_stages} stages")
    W, H = int(input_size[0]), int(input_size[1])
    J = kps.num_joints
    base_stride = cfg.scales[0]
    base_k = cfg.kernel_sizes[stage]

    mask = kps.labelled.copy()
    with np.errstate(invalid="ignore"):
        cells = np.floor(kps.coords / base_stride)
    inside = ((cells[:, 0] >= 0) & (cells[:, 0] < W // base_stride)
              & (cells[:, 1] >= 0) & (cells[:, 1] < H // base_stride))
    mask &= inside

    maps = []
    for stride in cfg.scales:
        h, w = H // stride, W // stride
        k = kernel_for_scale(base_k, stride, base_stride)
        patch = gaussian_kernel_2d(k) * cfg.peak_value
        r = k // 2
        out = np.zeros((J, h, w), dtype=dtype)
        for j in np.flatnonzero(mask):
            x = min(int(np.floor(kps.coords[j, 0] / stride)), w - 1)
            y = min(int(np.floor(kps.coords[j, 1] / stride)), h - 1)
            x0, x1 = max(0, x - r), min(w, x + r + 1)
            y0, y1 = max(0, y - r), min(h, y + r + 1)
            out[j, y0:y1, x0:x1] = patch[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r]
        maps.append(out)
    return HeatmapPyramid(maps, tuple(cfg.scales), mask)


def blur_heatmaps(heatmaps: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian smoothing over the last two axes (zero padding)."""
    if kernel_size == 1:
        return np.array(heatmaps, dtype=np.float64)
    g = gaussian_kernel_1d(kernel_size)
    g = g / g.sum()
    out = correlate1d(np.asarray(heatmaps, dtype=np.float64), g, axis=-1, mode="constant")
    return correlate1d(out, g, axis=-2, mode="constant")


def _second_peak(flat: np.ndarray, first: int) -> int:
    rest = flat.copy()
    rest[first] = -np.inf
    return int(np.argmax(rest))


def decode(heatmaps: np.ndarray, T_inv: Optional[AffineTransform] = None, blur_kernel: int = 5,
           stride: int = BASE_STRIDE) -> Tuple[np.ndarray, np.ndarray]:
    """Decode (J, h, w) heatmaps into (J, 2) coordinates and (J,) joint scores.

    Per joint: smooth, take the first row-major maximum, step a quarter cell
    toward the runner-up cell on each axis, scale to input pixels, and map
    through ``T_inv`` (input -> image). The score is the unsmoothed value at
    the maximum, clamped at 0. An all-zero map decodes to the map centre
    with score 0.
    """
    hm = np.asarray(heatmaps, dtype=np.float64)
    if hm.ndim != 3:
        raise InvalidInputError(f"expected (J, h, w) heatmaps, got shape {hm.shape}")
    if not np.all(np.isfinite(hm)):
        raise InvalidInputError("heatmaps contain non-finite values")
    if blur_kernel < 1 or blur_kernel % 2 == 0:
        raise InvalidInputError(f"blur kernel must be odd and >= 1, got {blur_kernel}")
    J, h, w = hm.shape
    blurred = blur_heatmaps(hm, blur_kernel)
    coords = np.empty((J, 2))
    scores = np.zeros(J)
    for j in range(J):
        if not np.any(hm[j]):
            coords[j] = (0.5 * w, 0.5 * h)
            continue
        flat = blurred[j].ravel()
        p1 = int(np.argmax(flat))
        y1, x1 = divmod(p1, w)
        x, y = x1 + 0.5, y1 + 0.5
        if flat.size > 1:
            y2, x2 = divmod(_second_peak(flat, p1), w)
            x += 0.25 * np.sign(x2 - x1)
            y += 0.25 * np.sign(y2 - y1)
        coords[j] = (x, y)
        scores[j] = max(hm[j, y1, x1], 0.0)
    coords *= stride
    if T_inv is not None:
        coords = apply_to_points(T_inv, coords)
    return coords, scores


def _check_pairs(swap_pairs, num_joints):
    for pair in swap_pairs:
        a, b = pair
        if not (0 <= a < num_joints and 0 <= b < num_joints):
            raise ConfigError(f"swap pair {tuple(pair)} out of range for {num_joints} joints")


def flip_permutation(swap_pairs: Sequence[Tuple[int, int]], num_joints: int) -> np.ndarray:
    _check_pairs(swap_pairs, num_joints)
    perm = np.arange(num_joints)
    for a, b in swap_pairs:
        perm[a], perm[b] = b, a
    return perm


def mirror_and_swap(heatmaps: np.ndarray, swap_pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Horizontal mirror plus left/right channel swap over (..., J, h, w)."""
    hm = np.asarray(heatmaps)
    perm = flip_permutation(swap_pairs, hm.shape[-3])
    return hm[..., perm, :, ::-1]


def flip_average(heatmaps: np.ndarray, heatmaps_flipped: np.ndarray,
                 swap_pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Average heatmaps with the un-mirrored, channel-swapped flipped-input prediction."""
    a = np.asarray(heatmaps)
    b = np.asarray(heatmaps_flipped)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return 0.5 * (a + mirror_and_swap(b, swap_pairs))


def score_pose(joint_scores, box_score: float) -> float:
    if not 0.0 <= box_score <= 1.0:
        raise InvalidInputError(f"box score {box_score} outside [0, 1]")
    s = np.asarray(joint_scores, dtype=np.float64)
    return float(box_score * s.mean()) if s.size else 0.0


@dataclass
class PoseResult:
    """A decoded person: image-space coordinates and scores."""

    coords: np.ndarray
    joint_scores: np.ndarray
    pose_score: float
    image_id: Optional[int] = None
    box: Optional[BoundingBox] = None

    @classmethod
    def from_decoded(cls, coords, joint_scores, box: BoundingBox, image_id=None) -> "PoseResult":
        return cls(np.asarray(coords), np.asarray(joint_scores),
                   score_pose(joint_scores, box.score), image_id, box)

    def as_keypoints(self) -> KeypointSet:
        return KeypointSet(self.coords, np.full(len(self.coords), 2))
