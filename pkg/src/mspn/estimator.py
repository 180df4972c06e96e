"""scikit-learn style front end.

:class:`HeatmapEncoder` is a stateless transformer between keypoint arrays
and finest-scale heatmaps. :class:`MSPNPoseEstimator` wraps training,
top-down prediction and AP scoring on :class:`~mspn.data_io.DatasetManifest`
inputs.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codec import PoseResult, decode, encode_targets
from .config import RunConfig, SupervisionConfig
from .data_io import DatasetManifest, DetectionFile, gt_boxes
from .engine import Trainer, load_model, predict
from .evaluation import coco_ap
from .exceptions import ConfigError
from .geometry import KeypointSet
from .network import load_checkpoint
from .validation import check_heatmaps, check_keypoints


class HeatmapEncoder(TransformerMixin, BaseEstimator):
    """Keypoints (N, J, 3) in input pixels <-> heatmaps (N, J, H/stride, W/stride).

    ``inverse_transform`` returns (N, J, 3) rows of ``x, y, score``.
    """

    def __init__(self, kernel_size: int = 7, stride: int = 4, input_size: Tuple[int, int] = (192, 256),
                 blur_kernel: int = 5):
        self.kernel_size = kernel_size
        self.stride = stride
        self.input_size = input_size
        self.blur_kernel = blur_kernel

    def fit(self, X, y=None):
        X = check_keypoints(X)
        self._sup = SupervisionConfig(kernel_sizes=(self.kernel_size,), scales=(self.stride,),
                                      scale_weights=(1.0,), ohkm_top_k=1)
        self.n_joints_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_joints_")
        X = check_keypoints(X, self.n_joints_)
        return np.stack([encode_targets(KeypointSet(x[:, :2], x[:, 2].astype(int)), self._sup, 0,
                                        self.input_size).maps[0] for x in X])

    def inverse_transform(self, H):
        check_is_fitted(self, "n_joints_")
        H = check_heatmaps(H, self.n_joints_)
        out = []
        for h in H:
            coords, scores = decode(h, None, self.blur_kernel, self.stride)
            out.append(np.column_stack([coords, scores]))
        return np.stack(out)


class MSPNPoseEstimator(BaseEstimator):
    """Train and apply a multi-stage pose network.

    ``config`` is a :class:`RunConfig`, a plain dict of it, or a YAML path.
    """

    def __init__(self, config: Union[RunConfig, dict, str, None] = None, output_dir: Optional[str] = None,
                 flip_test: Optional[bool] = None):
        self.config = config
        self.output_dir = output_dir
        self.flip_test = flip_test

    def _run_config(self) -> RunConfig:
        if isinstance(self.config, RunConfig):
            return self.config
        if isinstance(self.config, dict):
            return RunConfig.from_dict(self.config)
        if isinstance(self.config, (str, Path)):
            return RunConfig.load(self.config)
        return RunConfig()

    def fit(self, X: DatasetManifest, y=None, resume=None):
        cfg = self._run_config()
        res = Trainer(cfg, X, self.output_dir).run(resume)
        self.checkpoint_ = res.checkpoint
        self.loss_history_ = res.history
        self.model_ = load_model(res.checkpoint, cfg)
        return self

    @classmethod
    def from_checkpoint(cls, ckpt, config=None, **kwargs) -> "MSPNPoseEstimator":
        if config is None:
            stored = load_checkpoint(ckpt).get("run_config")
            if stored is None:
                raise ConfigError(f"{ckpt} carries no run config; pass one explicitly")
            config = RunConfig.from_dict(yaml.safe_load(stored))
        est = cls(config=config, **kwargs)
        est.checkpoint_ = Path(ckpt)
        est.model_ = load_model(ckpt, est._run_config())
        est.loss_history_ = []
        return est

    def predict(self, X: DatasetManifest, boxes: Optional[DetectionFile] = None) -> List[PoseResult]:
        check_is_fitted(self, "model_")
        results, _ = predict(self.model_, self._run_config(), X, boxes or gt_boxes(X), self.flip_test)
        return results

    def score(self, X: DatasetManifest, y=None) -> float:
        """OKS AP on ``X`` with ground-truth boxes."""
        by_image = {}
        for r in self.predict(X):
            by_image.setdefault(r.image_id, []).append(r)
        ap = coco_ap(by_image, X.by_image(), X.skeleton.k_consts).ap
        return float("nan") if ap is None else ap
