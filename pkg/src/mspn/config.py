"""Run configuration: network, supervision, augmentation, optimiser, data.

Configurations are plain dataclasses validated on construction. The file
form is a YAML tree whose keys mirror the dataclass fields one to one;
unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .exceptions import ConfigError

HEAD_STRIDES = (4, 8, 16, 32)
BLOCK_EXPANSION = {"bottleneck": 4, "basic": 1}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class NetworkConfig:
    """Architecture of an S-stage network.

    Every stage owns a residual down path with four levels (strides
    4/8/16/32) whose output widths double level to level, and a constant
    width up path with a joint head at each level.
    """

    num_stages: int = 2
    num_joints: int = 17
    input_size: Tuple[int, int] = (192, 256)  # (W, H)
    block: str = "bottleneck"
    base_width: int = 64
    blocks_per_level: Tuple[int, ...] = (3, 4, 6, 3)
    up_width: int = 256
    head_scales: Tuple[int, ...] = HEAD_STRIDES
    csfa_enabled: bool = True

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.blocks_per_level = tuple(int(v) for v in self.blocks_per_level)
        self.head_scales = tuple(int(v) for v in self.head_scales)
        _require(self.num_stages >= 1, "network.num_stages must be >= 1")
        _require(self.num_joints >= 1, "network.num_joints must be >= 1")
        _require(len(self.input_size) == 2, "network.input_size must be (W, H)")
        _require(all(v > 0 and v % 32 == 0 for v in self.input_size),
                 f"network.input_size {self.input_size} must be positive multiples of 32")
        _require(self.block in BLOCK_EXPANSION,
                 f"network.block must be one of {sorted(BLOCK_EXPANSION)}, got {self.block!r}")
        _require(self.base_width >= 1, "network.base_width must be >= 1")
        _require(len(self.blocks_per_level) == 4 and all(b >= 1 for b in self.blocks_per_level),
                 "network.blocks_per_level must list 4 counts, each >= 1")
        _require(self.up_width >= 1, "network.up_width must be >= 1")
        _require(self.head_scales == HEAD_STRIDES,
                 f"network.head_scales must be {list(HEAD_STRIDES)}, got {list(self.head_scales)}")

    @property
    def stem_width(self) -> int:
        return self.base_width

    @property
    def down_widths(self) -> Tuple[int, ...]:
        e = BLOCK_EXPANSION[self.block]
        return tuple(self.base_width * e * 2 ** level for level in range(4))

    @property
    def num_heads(self) -> int:
        return self.num_stages * len(self.head_scales)

    def head_shapes(self):
        """(J, h, w) of every head of one stage, finest first."""
        w, h = self.input_size
        return [(self.num_joints, h // s, w // s) for s in self.head_scales]


@dataclass
class SupervisionConfig:
    """Per-stage Gaussian kernel sizes and loss settings."""

    kernel_sizes: Tuple[int, ...] = (7, 5)
    scales: Tuple[int, ...] = HEAD_STRIDES
    peak_value: float = 1.0
    ohkm_top_k: int = 8
    scale_weights: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    stage_weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.scales = tuple(int(s) for s in self.scales)
        self.scale_weights = tuple(float(w) for w in self.scale_weights)
        if self.stage_weights is not None:
            self.stage_weights = tuple(float(w) for w in self.stage_weights)
        ks = self.kernel_sizes
        _require(len(ks) >= 1, "supervision.kernel_sizes must not be empty")
        _require(all(k >= 1 and k % 2 == 1 for k in ks),
                 f"supervision.kernel_sizes must be odd and >= 1, got {list(ks)}")
        _require(all(a >= b for a, b in zip(ks, ks[1:])),
                 f"supervision.kernel_sizes must be non-increasing, got {list(ks)}")
        _require(len(self.scales) >= 1 and all(s > 0 for s in self.scales),
                 "supervision.scales must be positive strides")
        _require(list(self.scales) == sorted(self.scales), "supervision.scales must be ascending")
        _require(self.peak_value > 0, "supervision.peak_value must be > 0")
        _require(self.ohkm_top_k >= 1, "supervision.ohkm_top_k must be >= 1")
        _require(len(self.scale_weights) == len(self.scales),
                 "supervision.scale_weights needs one weight per scale")
        if self.stage_weights is not None:
            _require(len(self.stage_weights) == len(ks),
                     "supervision.stage_weights needs one weight per stage")

    @property
    def num_stages(self) -> int:
        return len(self.kernel_sizes)

    def stage_weight(self, stage: int) -> float:
        return 1.0 if self.stage_weights is None else self.stage_weights[stage]


@dataclass
class AugmentConfig:
    """Training-time geometric augmentation ranges.

    ``upper_joint_ids``/``lower_joint_ids`` default to the skeleton preset.
    """

    rot_range_deg: Tuple[float, float] = (-45.0, 45.0)
    scale_range: Tuple[float, float] = (0.7, 1.35)
    flip_prob: float = 0.5
    half_body_min_joints: int = 8
    half_body_prob: float = 0.5
    upper_joint_ids: Optional[Tuple[int, ...]] = None
    lower_joint_ids: Optional[Tuple[int, ...]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.rot_range_deg = tuple(float(v) for v in self.rot_range_deg)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        if self.upper_joint_ids is not None:
            self.upper_joint_ids = tuple(int(i) for i in self.upper_joint_ids)
        if self.lower_joint_ids is not None:
            self.lower_joint_ids = tuple(int(i) for i in self.lower_joint_ids)
        lo, hi = self.rot_range_deg
        _require(len(self.rot_range_deg) == 2 and lo <= hi, "augment.rot_range_deg must be [lo, hi]")
        lo, hi = self.scale_range
        _require(len(self.scale_range) == 2 and 0 < lo <= hi, "augment.scale_range must be [lo, hi] > 0")
        _require(0.0 <= self.flip_prob <= 1.0, "augment.flip_prob must lie in [0, 1]")
        _require(0.0 <= self.half_body_prob <= 1.0, "augment.half_body_prob must lie in [0, 1]")
        _require(self.half_body_min_joints >= 0, "augment.half_body_min_joints must be >= 0")
        if self.upper_joint_ids is not None and self.lower_joint_ids is not None:
            _require(not set(self.upper_joint_ids) & set(self.lower_joint_ids),
                     "augment.upper_joint_ids and lower_joint_ids must be disjoint")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(rot_range_deg=(0.0, 0.0), scale_range=(1.0, 1.0), flip_prob=0.0, half_body_prob=0.0)


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr_start: float = 5e-4
    lr_end: float = 0.0
    schedule: str = "linear"
    weight_decay: float = 1e-5
    iterations: int = 90000
    batch_per_device: int = 32

    def __post_init__(self):
        _require(self.kind == "adam", f"optimizer.kind must be 'adam', got {self.kind!r}")
        _require(self.schedule == "linear", f"optimizer.schedule must be 'linear', got {self.schedule!r}")
        _require(self.iterations > 0, "optimizer.iterations must be > 0")
        _require(self.lr_start >= self.lr_end >= 0, "optimizer needs lr_start >= lr_end >= 0")
        _require(self.weight_decay >= 0, "optimizer.weight_decay must be >= 0")
        _require(self.batch_per_device >= 1, "optimizer.batch_per_device must be >= 1")

    def lr_at(self, iteration: int) -> float:
        frac = min(max(iteration / self.iterations, 0.0), 1.0)
        return self.lr_end + (self.lr_start - self.lr_end) * (1.0 - frac)


@dataclass
class DataConfig:
    skeleton: str = "coco17"
    train_ann: Optional[str] = None
    train_images: Optional[str] = None
    val_ann: Optional[str] = None
    val_images: Optional[str] = None
    aspect_ratio: float = 4.0 / 3.0  # h / w
    bbox_padding: float = 1.0

    def __post_init__(self):
        _require(self.aspect_ratio > 0, "data.aspect_ratio must be > 0")
        _require(self.bbox_padding >= 1.0, "data.bbox_padding must be >= 1")


@dataclass
class InferenceConfig:
    blur_kernel: int = 5
    flip_test: bool = True
    det_top_n: int = 100
    det_min_score: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        _require(self.blur_kernel >= 1 and self.blur_kernel % 2 == 1, "inference.blur_kernel must be odd and >= 1")
        _require(self.det_top_n >= 1, "inference.det_top_n must be >= 1")
        _require(0.0 <= self.det_min_score <= 1.0, "inference.det_min_score must lie in [0, 1]")
        _require(self.batch_size >= 1, "inference.batch_size must be >= 1")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        net, sup = self.network, self.supervision
        _require(sup.num_stages == net.num_stages,
                 f"supervision.kernel_sizes has {sup.num_stages} entries for {net.num_stages} stages")
        _require(tuple(sup.scales) == tuple(net.head_scales),
                 "supervision.scales must match network.head_scales")
        _require(sup.ohkm_top_k <= net.num_joints,
                 f"supervision.ohkm_top_k={sup.ohkm_top_k} exceeds num_joints={net.num_joints}")
        _require(self.checkpoint_every >= 0, "checkpoint_every must be >= 0")
        _require(self.log_every >= 1, "log_every must be >= 1")

    @property
    def input_size(self) -> Tuple[int, int]:
        return self.network.input_size

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    def to_yaml(self) -> str:
        return yaml.dump(self.to_dict(), Dumper=_Dumper, sort_keys=False, default_flow_style=False)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        return _from_plain(cls, d or {}, "")

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)


class _Dumper(yaml.SafeDumper):
    """Block mappings with inline lists."""


_Dumper.add_representer(list, lambda d, v: d.represent_sequence("tag:yaml.org,2002:seq", v, flow_style=True))


def to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    return obj


_NESTED = {
    "network": NetworkConfig,
    "supervision": SupervisionConfig,
    "augment": AugmentConfig,
    "optimizer": OptimizerConfig,
    "data": DataConfig,
    "inference": InferenceConfig,
}


def _from_plain(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        where = prefix.rstrip(".") or "top level"
        raise ConfigError(f"unknown config keys at {where}: {unknown}")
    kwargs = {}
    for key, value in d.items():
        if cls is RunConfig and key in _NESTED:
            kwargs[key] = _from_plain(_NESTED[key], value or {}, f"{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc
