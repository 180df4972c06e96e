"""Joint layouts shipped with the package (COCO-17, MPII-16, synthetic-5)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Dict, Tuple

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class Skeleton:
    """Joint names plus the index lists the pipeline needs.

    ``sigmas`` are the per-joint COCO falloff constants; the OKS
    normaliser uses ``k = 2 * sigma``.
    """

    name: str
    joints: Tuple[str, ...]
    flip_pairs: Tuple[Tuple[int, int], ...]
    upper: Tuple[int, ...]
    lower: Tuple[int, ...]
    sigmas: Tuple[float, ...]
    links: Tuple[Tuple[int, int], ...] = ()
    pckh_groups: Dict[str, Tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.joints)
        if len(self.sigmas) != n:
            raise ConfigError(f"{self.name}: {len(self.sigmas)} sigmas for {n} joints")
        for a, b in self.flip_pairs:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ConfigError(f"{self.name}: bad flip pair ({a}, {b})")
        if set(self.upper) & set(self.lower):
            raise ConfigError(f"{self.name}: upper and lower joint ids overlap")

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def k_consts(self) -> np.ndarray:
        return 2.0 * np.asarray(self.sigmas, dtype=np.float64)

    def flip_permutation(self) -> np.ndarray:
        """Index array ``perm`` such that ``flipped[j] = original[perm[j]]``."""
        perm = np.arange(self.num_joints)
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joints": list(self.joints),
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "upper": list(self.upper),
            "lower": list(self.lower),
            "sigmas": list(self.sigmas),
            "links": [list(p) for p in self.links],
            "pckh_groups": {k: list(v) for k, v in self.pckh_groups.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(
            name=d["name"],
            joints=tuple(d["joints"]),
            flip_pairs=tuple(tuple(int(i) for i in p) for p in d.get("flip_pairs", [])),
            upper=tuple(int(i) for i in d.get("upper", [])),
            lower=tuple(int(i) for i in d.get("lower", [])),
            sigmas=tuple(float(s) for s in d["sigmas"]),
            links=tuple(tuple(int(i) for i in p) for p in d.get("links", [])),
            pckh_groups={k: tuple(int(i) for i in v) for k, v in d.get("pckh_groups", {}).items()},
        )


PRESETS = ("coco17", "mpii16", "synthetic5")


@lru_cache(maxsize=None)
def get_skeleton(name: str) -> Skeleton:
    if name not in PRESETS:
        raise ConfigError(f"unknown skeleton preset {name!r}; expected one of {PRESETS}")
    text = resources.files("mspn.data").joinpath(f"{name}.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def preset_for_joint_count(num_joints: int) -> str:
    for name in PRESETS:
        if get_skeleton(name).num_joints == num_joints:
            return name
    raise ConfigError(f"no skeleton preset with {num_joints} joints")
