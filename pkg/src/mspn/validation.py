"""Array checks shared by the estimator front end."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .exceptions import InvalidInputError


def check_keypoints(X, num_joints: Optional[int] = None) -> np.ndarray:
    """Coerce to a float (N, J, 3) array of ``x, y, v`` triples.

    A single (J, 3) set or flat COCO rows (N, 3J) are accepted too.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 3 and num_joints in (None, arr.shape[0]):
        arr = arr[None]
    elif arr.ndim == 2 and arr.shape[1] % 3 == 0:
        arr = arr.reshape(arr.shape[0], -1, 3)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected keypoints of shape (N, J, 3), got {np.shape(X)}")
    if num_joints is not None and arr.shape[1] != num_joints:
        raise InvalidInputError(f"expected {num_joints} joints, got {arr.shape[1]}")
    vis = arr[..., 2]
    if not np.all(np.isin(vis, (0, 1, 2))):
        raise InvalidInputError("visibility flags must be 0, 1 or 2")
    if not np.all(np.isfinite(arr[..., :2][vis > 0])):
        raise InvalidInputError("labelled keypoints must be finite")
    return arr


def check_heatmaps(H, num_joints: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite float (N, J, h, w) array."""
    arr = np.asarray(H, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise InvalidInputError(f"expected heatmaps of shape (N, J, h, w), got {np.shape(H)}")
    if num_joints is not None and arr.shape[1] != num_joints:
        raise InvalidInputError(f"expected {num_joints} heatmap channels, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("heatmaps contain non-finite values")
    return arr
