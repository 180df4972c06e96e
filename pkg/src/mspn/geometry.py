"""Boxes, keypoint sets, and the affine maps between image, network-input
and heatmap coordinates.

Coordinates are continuous with pixel *edges* on integers: pixel ``(i, j)``
covers ``[i, i+1) x [j, j+1)`` and its centre sits at ``(i + 0.5, j + 0.5)``.
Under this convention a horizontal mirror of a width-``W`` image is exactly
``x -> W - x``, and a box's corners map onto the crop's corners.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np

from .exceptions import InvalidInputError

_DET_EPS = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h, self.score)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"box dimensions must be positive, got w={self.w}, h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"box score {self.score} outside [0, 1]")

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def xywh(self):
        return [self.x, self.y, self.w, self.h]

    def contains(self, other: "BoundingBox", tol: float = 1e-9) -> bool:
        return (self.x <= other.x + tol and self.y <= other.y + tol
                and self.x + self.w >= other.x + other.w - tol
                and self.y + self.h >= other.y + other.h - tol)


@dataclass(frozen=True)
class KeypointSet:
    """J joints: ``coords`` (J, 2) and ``vis`` (J,) in {0, 1, 2}.

    0 = not labelled, 1 = labelled but occluded, 2 = visible.
    """

    coords: np.ndarray
    vis: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        vis = np.asarray(self.vis, dtype=np.int64).reshape(-1)
        if coords.shape[0] != vis.shape[0]:
            raise InvalidInputError(f"{coords.shape[0]} coords but {vis.shape[0]} visibility flags")
        if np.any((vis < 0) | (vis > 2)):
            raise InvalidInputError("visibility flags must be 0, 1 or 2")
        if not np.all(np.isfinite(coords[vis > 0])):
            raise InvalidInputError("labelled keypoints must have finite coordinates")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "vis", vis)

    @property
    def num_joints(self) -> int:
        return self.vis.shape[0]

    @property
    def labelled(self) -> np.ndarray:
        return self.vis > 0

    def num_labelled(self) -> int:
        return int(np.count_nonzero(self.vis))

    @classmethod
    def from_coco(cls, flat: Sequence[float]) -> "KeypointSet":
        arr = np.asarray(flat, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2].round().astype(np.int64))

    def to_coco(self) -> list:
        out = []
        for (x, y), v in zip(self.coords, self.vis):
            out.extend([float(x), float(y), int(v)])
        return out


class AffineTransform:
    """A 2x3 affine map ``p -> A @ p + b``."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=np.float64)
        if m.shape == (3, 3):
            m = m[:2]
        if m.shape != (2, 3):
            raise InvalidInputError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("affine matrix has non-finite entries")
        if abs(np.linalg.det(m[:, :2])) <= _DET_EPS:
            raise InvalidInputError("affine linear part is singular")
        m.setflags(write=False)
        self.m = m

    def __repr__(self):
        return f"AffineTransform({self.m.tolist()})"

    @property
    def matrix3(self) -> np.ndarray:
        return np.vstack([self.m, [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m[:, :2]))

    def __matmul__(self, other: "AffineTransform") -> "AffineTransform":
        """``(self @ other)(p) == self(other(p))``."""
        return AffineTransform(self.matrix3 @ other.matrix3)

    compose = __matmul__

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix3))

    def apply(self, pts) -> np.ndarray:
        return apply_to_points(self, pts)

    def allclose(self, other: "AffineTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.m, other.m, atol=atol, rtol=0.0))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty]])

    @classmethod
    def scaling(cls, sx: float, sy: Optional[float] = None) -> "AffineTransform":
        sy = sx if sy is None else sy
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0]])

    @classmethod
    def rotation(cls, degrees: float) -> "AffineTransform":
        """Rotation about the origin by the standard matrix; (1, 0) -> (cos, sin)."""
        t = math.radians(degrees)
        c, s = math.cos(t), math.sin(t)
        return cls([[c, -s, 0.0], [s, c, 0.0]])

    @classmethod
    def hflip(cls, width: float) -> "AffineTransform":
        return cls([[-1.0, 0.0, width], [0.0, 1.0, 0.0]])


def apply_to_points(transform: AffineTransform, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    out = flat @ transform.m[:, :2].T + transform.m[:, 2]
    return out.reshape(pts.shape)


def expand_to_aspect(box: BoundingBox, ratio_h_over_w: float = 4.0 / 3.0,
                     padding: float = 1.0) -> BoundingBox:
    """Grow the deficient side of ``box`` (after padding) to the target h/w ratio.

    The centre is held fixed and no side ever shrinks.
    """
    if ratio_h_over_w <= 0:
        raise InvalidInputError(f"ratio must be positive, got {ratio_h_over_w}")
    if padding < 1:
        raise InvalidInputError(f"padding must be >= 1, got {padding}")
    cx, cy = box.center
    w, h = box.w * padding, box.h * padding
    if h < w * ratio_h_over_w:
        h = w * ratio_h_over_w
    elif h > w * ratio_h_over_w:
        w = h / ratio_h_over_w
    return BoundingBox(cx - 0.5 * w, cy - 0.5 * h, w, h, box.score)


def crop_transform(box: BoundingBox, out_w: float, out_h: float, rotation_deg: float = 0.0,
                   scale: float = 1.0, flip: bool = False) -> AffineTransform:
    """Map image coordinates into an ``out_w x out_h`` crop around ``box``.

    ``scale`` multiplies the cropped region (``> 1`` zooms out); rotation is
    about the box centre. With no rotation, scale or flip the box corners
    land on the crop corners. ``flip`` mirrors the crop as ``x -> out_w - x``.
    """
    if scale <= 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    cx, cy = box.center
    t = (AffineTransform.translation(0.5 * out_w, 0.5 * out_h)
         @ AffineTransform.scaling(out_w / (box.w * scale), out_h / (box.h * scale))
         @ AffineTransform.rotation(rotation_deg)
         @ AffineTransform.translation(-cx, -cy))
    if flip:
        t = AffineTransform.hflip(out_w) @ t
    return t


def to_pixel_index_matrix(transform: AffineTransform) -> np.ndarray:
    """The same map expressed for pixel-centre-at-integer routines such as cv2."""
    half = AffineTransform.translation(0.5, 0.5)
    return (half.inverse() @ transform @ half).m


def warp_image(image: np.ndarray, transform: AffineTransform, out_size: Tuple[int, int],
               border_value=0) -> np.ndarray:
    """Resample ``image`` so that output pixel p shows input ``transform^-1(p)``."""
    out_w, out_h = int(out_size[0]), int(out_size[1])
    return cv2.warpAffine(image, to_pixel_index_matrix(transform), (out_w, out_h),
                          flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                          borderValue=border_value)


def transform_keypoints(kps: KeypointSet, transform: AffineTransform) -> KeypointSet:
    coords = kps.coords.copy()
    lab = kps.labelled
    coords[lab] = apply_to_points(transform, coords[lab])
    return KeypointSet(coords, kps.vis.copy())


def box_from_points(pts: np.ndarray, score: float = 1.0) -> Optional[BoundingBox]:
    """Tight box around points; ``None`` if it would be degenerate."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return None
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    w, h = hi - lo
    if w <= 0 or h <= 0:
        return None
    return BoundingBox(float(lo[0]), float(lo[1]), float(w), float(h), score)
