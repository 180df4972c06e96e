"""Static compute accounting for a network configuration.

Every convolution contributes ``k*k*Cin*Cout*Hout*Wout`` multiply-accumulates
(MACs). ``flops`` reports ``2 * MACs`` plus one op per element for the
additive merges (residual shortcuts, up-path sums, cross-stage sums).
Layer names match the parameter names of :mod:`mspn.network`, so the
static count can be checked against the instantiated model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

from .config import BLOCK_EXPANSION, NetworkConfig


@dataclass(frozen=True)
class ConvRecord:
    name: str
    kernel: int
    cin: int
    cout: int
    hout: int
    wout: int

    @property
    def macs(self) -> int:
        return self.kernel * self.kernel * self.cin * self.cout * self.hout * self.wout


@dataclass
class FlopsReport:
    convs: List[ConvRecord] = field(default_factory=list)
    elementwise: Dict[str, int] = field(default_factory=dict)  # stage name -> op count

    @property
    def macs(self) -> int:
        return sum(c.macs for c in self.convs)

    @property
    def elementwise_ops(self) -> int:
        return sum(self.elementwise.values())

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise_ops

    def stage_macs(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for c in self.convs:
            key = c.name.split(".", 1)[0]
            out[key] = out.get(key, 0) + c.macs
        return out

    def macs_matching(self, fragment: str) -> int:
        return sum(c.macs for c in self.convs if fragment in c.name)

    def by_name(self) -> Dict[str, int]:
        return {c.name: c.macs for c in self.convs}

    def summary(self) -> Dict[str, float]:
        return {
            "macs": float(self.macs),
            "gmacs": self.macs / 1e9,
            "flops": float(self.flops),
            "gflops": self.flops / 1e9,
            "elementwise_ops": float(self.elementwise_ops),
            **{f"{k}_gmacs": v / 1e9 for k, v in self.stage_macs().items()},
        }


def _block_convs(prefix, block, cin, planes, stride, h, w, convs):
    """Append one residual block's convs; returns (cout, h_out, w_out, merge ops)."""
    ho, wo = h // stride, w // stride
    exp = BLOCK_EXPANSION[block]
    cout = planes * exp
    if block == "bottleneck":
        convs.append(ConvRecord(f"{prefix}.conv1", 1, cin, planes, h, w))
        convs.append(ConvRecord(f"{prefix}.conv2", 3, planes, planes, ho, wo))
        convs.append(ConvRecord(f"{prefix}.conv3", 1, planes, cout, ho, wo))
    else:
        convs.append(ConvRecord(f"{prefix}.conv1", 3, cin, planes, ho, wo))
        convs.append(ConvRecord(f"{prefix}.conv2", 3, planes, planes, ho, wo))
    if stride != 1 or cin != cout:
        convs.append(ConvRecord(f"{prefix}.downsample.0", 1, cin, cout, ho, wo))
    return cout, ho, wo, cout * ho * wo


def estimate_flops(cfg: NetworkConfig) -> FlopsReport:
    W, H = cfg.input_size
    report = FlopsReport()
    convs = report.convs
    for s in range(1, cfg.num_stages + 1):
        st = f"stage{s}"
        ops = 0
        h4, w4 = H // 4, W // 4
        if s == 1:
            convs.append(ConvRecord(f"{st}.stem.conv", 7, 3, cfg.stem_width, H // 2, W // 2))
        else:
            convs.append(ConvRecord(f"{st}.entry.conv", 1, cfg.up_width, cfg.stem_width, h4, w4))

        cin, h, w = cfg.stem_width, h4, w4
        level_shapes = []
        for l, (n_blocks, width) in enumerate(zip(cfg.blocks_per_level, cfg.down_widths)):
            planes = width // BLOCK_EXPANSION[cfg.block]
            for b in range(n_blocks):
                stride = 2 if (b == 0 and l > 0) else 1
                cin, h, w, merge = _block_convs(f"{st}.down.level{l + 1}.block{b + 1}", cfg.block,
                                                cin, planes, stride, h, w, convs)
                ops += merge
            level_shapes.append((width, h, w))
            if cfg.csfa_enabled and s > 1:
                convs.append(ConvRecord(f"{st}.agg.level{l + 1}.down", 1, width, width, h, w))
                convs.append(ConvRecord(f"{st}.agg.level{l + 1}.up", 1, cfg.up_width, width, h, w))
                ops += 2 * width * h * w

        for l, (width, h, w) in enumerate(level_shapes):
            convs.append(ConvRecord(f"{st}.up.level{l + 1}.lateral", 1, width, cfg.up_width, h, w))
            if l < len(level_shapes) - 1:
                ops += cfg.up_width * h * w
        for k, (_, h, w) in enumerate(level_shapes):
            convs.append(ConvRecord(f"{st}.head.scale{k + 1}", 3, cfg.up_width, cfg.num_joints, h, w))
        report.elementwise[st] = ops
    return report


def count_model_macs(model, input_size) -> Dict[str, int]:
    """Measure conv MACs of an instantiated model with forward hooks."""
    import torch
    from torch import nn

    counts: Dict[str, int] = {}
    hooks = []
    for name, m in model.named_modules():
        if isinstance(m, nn.Conv2d):
            def hook(mod, inp, out, name=name):
                kh, kw = mod.kernel_size
                cin = mod.in_channels // mod.groups
                counts[name] = kh * kw * cin * out.shape[1] * out.shape[2] * out.shape[3]
            hooks.append(m.register_forward_hook(hook))
    W, H = input_size
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros(1, 3, H, W))
    finally:
        for h in hooks:
            h.remove()
        model.train(was_training)
    return counts
