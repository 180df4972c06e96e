"""Multi-stage pose network.

Each stage is a U-shaped module: a ResNet-style down path over four
levels (strides 4, 8, 16, 32; widths doubling), a constant-width up path
built from 1x1 laterals plus nearest upsampling, and a 3x3 joint head at
every level. Stage ``s > 1`` reads the previous stage's stride-4 up feature
through a 1x1 entry conv and, with cross-stage aggregation on, adds two
1x1-projected previous-stage features (down and up) to each of its own
down features.

Parameter names are stable and form the checkpoint schema::

    stage{s}.stem.*                     stage 1 only
    stage{s}.entry.*                    stages >= 2
    stage{s}.down.level{l}.block{b}.*
    stage{s}.up.level{l}.*
    stage{s}.agg.level{l}.{down|up}.*   stages >= 2 with aggregation
    stage{s}.head.scale{k}.*

All indices are 1-based; ``scale1`` is stride 4.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import BLOCK_EXPANSION, NetworkConfig, RunConfig, to_plain
from .exceptions import ConfigError, InvalidInputError

CHECKPOINT_FORMAT = "mspn-checkpoint-v1"


def conv_bn(cin: int, cout: int, k: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride, k // 2, bias=False), nn.BatchNorm2d(cout))


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, cin: int, planes: int, stride: int = 1):
        super().__init__()
        cout = planes * self.expansion
        self.conv1 = nn.Conv2d(cin, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, cout, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(cout)
        self.downsample = conv_bn(cin, cout, 1, stride) if (stride != 1 or cin != cout) else None

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        identity = x if self.downsample is None else self.downsample(x)
        return F.relu(out + identity)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, cin: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, planes, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample = conv_bn(cin, planes, 1, stride) if (stride != 1 or cin != planes) else None

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.downsample is None else self.downsample(x)
        return F.relu(out + identity)


BLOCKS = {"bottleneck": Bottleneck, "basic": BasicBlock}
assert all(BLOCKS[k].expansion == v for k, v in BLOCK_EXPANSION.items())


class Stem(nn.Module):
    """7x7/2 conv + 3x3/2 max-pool: image to stride-4 features."""

    def __init__(self, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(3, cout, 7, 2, 3, bias=False)
        self.bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        return F.max_pool2d(F.relu(self.bn(self.conv(x))), 3, 2, 1)


class Entry(nn.Module):
    """1x1 projection of the previous stage's stride-4 up feature."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 1, bias=False)
        self.bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class UpLevel(nn.Module):
    def __init__(self, cin: int, width: int):
        super().__init__()
        self.lateral = nn.Conv2d(cin, width, 1, bias=False)
        self.bn = nn.BatchNorm2d(width)

    def forward(self, x, coarser=None):
        out = self.bn(self.lateral(x))
        if coarser is not None:
            out = out + F.interpolate(coarser, scale_factor=2, mode="nearest")
        return F.relu(out)


class AggLevel(nn.Module):
    def __init__(self, down_width: int, up_width: int):
        super().__init__()
        self.down = nn.Conv2d(down_width, down_width, 1, bias=False)
        self.up = nn.Conv2d(up_width, down_width, 1, bias=False)

    def forward(self, prev_down, prev_up):
        return self.down(prev_down) + self.up(prev_up)


@dataclass
class StageTensors:
    down_feats: List[torch.Tensor]
    up_feats: List[torch.Tensor]
    heads: List[torch.Tensor]


class Stage(nn.Module):
    def __init__(self, cfg: NetworkConfig, index: int):
        super().__init__()
        self.index = index
        self.use_csfa = cfg.csfa_enabled and index > 1
        block = BLOCKS[cfg.block]
        if index == 1:
            self.stem = Stem(cfg.stem_width)
        else:
            self.entry = Entry(cfg.up_width, cfg.stem_width)

        cin = cfg.stem_width
        down = {}
        for l, (n_blocks, width) in enumerate(zip(cfg.blocks_per_level, cfg.down_widths)):
            planes = width // block.expansion
            blocks = {}
            for b in range(n_blocks):
                stride = 2 if (b == 0 and l > 0) else 1
                blocks[f"block{b + 1}"] = block(cin, planes, stride)
                cin = width
            down[f"level{l + 1}"] = nn.ModuleDict(blocks)
        self.down = nn.ModuleDict(down)
        self.up = nn.ModuleDict({f"level{l + 1}": UpLevel(w, cfg.up_width)
                                 for l, w in enumerate(cfg.down_widths)})
        if self.use_csfa:
            self.agg = nn.ModuleDict({f"level{l + 1}": AggLevel(w, cfg.up_width)
                                      for l, w in enumerate(cfg.down_widths)})
        self.head = nn.ModuleDict({f"scale{k + 1}": nn.Conv2d(cfg.up_width, cfg.num_joints, 3, 1, 1)
                                   for k in range(len(cfg.head_scales))})

    def forward(self, x, prev: Optional[StageTensors] = None) -> StageTensors:
        """``x``: image for stage 1, previous stride-4 up feature otherwise."""
        x = self.stem(x) if self.index == 1 else self.entry(x)
        down_feats = []
        for l, level in enumerate(self.down.values()):
            for blk in level.values():
                x = blk(x)
            if self.use_csfa and prev is not None:
                x = x + self.agg[f"level{l + 1}"](prev.down_feats[l], prev.up_feats[l])
            down_feats.append(x)

        ups = list(self.up.values())
        up_feats = [None] * len(ups)
        coarser = None
        for l in reversed(range(len(ups))):
            coarser = ups[l](down_feats[l], coarser)
            up_feats[l] = coarser
        heads = [h(u) for h, u in zip(self.head.values(), up_feats)]
        return StageTensors(down_feats, up_feats, heads)


class MSPN(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        for s in range(1, cfg.num_stages + 1):
            self.add_module(f"stage{s}", Stage(cfg, s))

    @property
    def stages(self) -> List[Stage]:
        return [getattr(self, f"stage{s}") for s in range(1, self.cfg.num_stages + 1)]

    def _check_input(self, x: torch.Tensor):
        W, H = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[-2:]) != (H, W):
            raise InvalidInputError(f"expected input (B, 3, {H}, {W}), got {tuple(x.shape)}")

    def forward_features(self, x: torch.Tensor) -> List[StageTensors]:
        self._check_input(x)
        outs = []
        prev = None
        for stage in self.stages:
            inp = x if prev is None else prev.up_feats[0]
            prev = stage(inp, prev)
            outs.append(prev)
        return outs

    def forward(self, x: torch.Tensor) -> List[List[torch.Tensor]]:
        """Heads of every stage, each a list of 4 tensors (B, J, H/s, W/s), finest first."""
        return [st.heads for st in self.forward_features(x)]


def init_weights(model: nn.Module) -> None:
    for name, m in model.named_modules():
        if isinstance(m, nn.Conv2d):
            if ".agg." in f".{name}.":
                nn.init.zeros_(m.weight)
            elif ".head." in f".{name}.":
                nn.init.normal_(m.weight, std=1e-3)
            else:
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build(cfg: NetworkConfig, seed: int = 0) -> MSPN:
    """Construct a network with parameters drawn deterministically from ``seed``."""
    if not isinstance(cfg, NetworkConfig):
        raise ConfigError(f"expected NetworkConfig, got {type(cfg).__name__}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MSPN(cfg)
        init_weights(model)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def final_prediction(heads: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    return heads[-1][0]


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, model: MSPN, run_config: Optional[RunConfig] = None, optimizer=None,
                    iteration: int = 0, extra: Optional[dict] = None) -> None:
    """Write the archive atomically; ``extra`` holds resumable loop state."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "network_config": to_plain(model.cfg),
        "run_config": run_config.to_yaml() if run_config is not None else None,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "iteration": int(iteration),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"{path}: not an {CHECKPOINT_FORMAT} archive")
    return payload


def model_from_checkpoint(payload: dict) -> MSPN:
    cfg = NetworkConfig(**payload["network_config"])
    model = MSPN(cfg)
    model.load_state_dict(payload["state_dict"])
    return model
