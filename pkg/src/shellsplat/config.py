"""Run configuration: per-stage optimizer/schedule knobs and pipeline settings.

Config files are flat `key = value` text; CLI flags override file values.
Every trained artifact is stamped with a hash of the resolved configuration so
outputs can be traced back to their settings.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional


@dataclass
class StageConfig:
    iterations: int = 7000
    lambda_dssim: float = 0.2
    lambda_shell: float = 1.0
    lambda_planarity: float = 0.01
    epsilon: float = 1e-8
    position_lr_init: float = 0.00016  # multiplied by the stage's spatial scale
    position_lr_final: float = 0.0000016
    feature_lr: float = 0.0025
    opacity_lr: float = 0.05
    scaling_lr: float = 0.005
    rotation_lr: float = 0.001
    densify_from: int = 500
    densify_until: int = 5000
    densify_interval: int = 100
    densify_grad_threshold: float = 0.0002
    percent_dense: float = 0.01
    prune_interval: int = 100
    opacity_prune_threshold: float = 0.005
    max_gaussians: int = 200_000
    sh_degree: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not (0.0 <= self.lambda_dssim <= 1.0):
            raise ValueError("lambda_dssim must be in [0,1]")
        for name in ("lambda_shell", "lambda_planarity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.densify_interval <= 0 or self.prune_interval <= 0:
            raise ValueError("densify/prune intervals must be positive")
        if not (0 <= self.sh_degree <= 3):
            raise ValueError("sh_degree must be in [0,3]")
        if self.max_gaussians < 1:
            raise ValueError("max_gaussians must be positive")

    def replace(self, **kw) -> "StageConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class RunConfig:
    colmap_dir: str = ""
    images_dir: str = ""
    depths_dir: str = ""
    out_dir: str = "out"
    seed: int = 0
    depth_convention: str = "z"  # "z" or "ray"
    icosphere_level: int = 5
    init_mode: str = "random"  # or "distance"
    r_inner: Optional[float] = None
    r_outer: Optional[float] = None
    center: Optional[tuple] = None  # override scene center
    test_fraction: float = 0.2
    port: int = 8000
    face_res: int = 512
    near_cut: Optional[float] = None  # defaults to r_inner at extraction time
    ablate: str = "none"  # none | no-shell | no-planarity | distance-init
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(
        default_factory=lambda: StageConfig(lambda_shell=0.0, lambda_planarity=0.0)
    )

    def __post_init__(self):
        if self.depth_convention not in ("z", "ray"):
            raise ValueError("depth_convention must be 'z' or 'ray'")
        if self.init_mode not in ("random", "distance"):
            raise ValueError("init_mode must be 'random' or 'distance'")
        if self.ablate not in ("none", "no-shell", "no-planarity", "distance-init"):
            raise ValueError(f"unknown ablation '{self.ablate}'")
        if not (0.0 < self.test_fraction < 1.0):
            raise ValueError("test_fraction must be in (0,1)")
        if self.icosphere_level < 0 or self.icosphere_level > 7:
            raise ValueError("icosphere_level must be in [0,7]")

    def apply_ablation(self) -> "RunConfig":
        out = dataclasses.replace(self)
        if self.ablate == "no-shell":
            out.stage1 = self.stage1.replace(lambda_shell=0.0)
        elif self.ablate == "no-planarity":
            out.stage1 = self.stage1.replace(lambda_planarity=0.0)
        elif self.ablate == "distance-init":
            out.init_mode = "distance"
        return out


def flatten_config(cfg) -> dict:
    """Dataclass (possibly nested) -> flat {dotted.key: value} dict."""
    out = {}

    def walk(prefix, obj):
        for f in fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                walk(key + ".", v)
            else:
                out[key] = v

    walk("", cfg)
    return out


def config_hash(cfg) -> str:
    flat = flatten_config(cfg)
    text = "\n".join(f"{k}={flat[k]!r}" for k in sorted(flat))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def parse_config_file(path) -> dict:
    """Flat `key = value` file -> dict with int/float/str coercion."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def write_meta(path, meta: dict):
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
