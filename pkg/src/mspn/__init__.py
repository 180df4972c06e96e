"""Multi-stage top-down human pose estimation."""
from .codec import PoseResult, decode, encode_targets
from .config import (AugmentConfig, DataConfig, InferenceConfig, NetworkConfig, OptimizerConfig, RunConfig,
                     SupervisionConfig)
from .estimator import HeatmapEncoder, MSPNPoseEstimator
from .exceptions import ConfigError, InvalidInputError, SchemaError, TrainingDivergedError
from .geometry import AffineTransform, BoundingBox, KeypointSet
from .network import MSPN, build

__all__ = [
    "AffineTransform", "AugmentConfig", "BoundingBox", "ConfigError", "DataConfig", "HeatmapEncoder",
    "InferenceConfig", "InvalidInputError", "KeypointSet", "MSPN", "MSPNPoseEstimator", "NetworkConfig",
    "OptimizerConfig", "PoseResult", "RunConfig", "SchemaError", "SupervisionConfig", "TrainingDivergedError",
    "build", "decode", "encode_targets",
]
__version__ = "0.1.0"
