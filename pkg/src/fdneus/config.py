"""Experiment configuration: an INI file with fixed sections and keys.

Every key has a default, so an empty file is a valid config. Unknown sections
or keys are rejected so that typos fail loudly.

    [scene]       spec, views, width, height, fov, view_seed, view_targets, gt_resolution
    [noise]       normal_fraction, normal_angle_deg, normal_regions, feature_sigma, rgb_sigma, seed
    [sampling]    ray_mode, pdf_mode, ray_budget, n_coarse, n_fine, clamp_eps, delta_start,
                  delta_end, near, far_margin, coarse_s_min, boost_beta
    [loss]        rgb, normal, feature, eikonal, feature_on, uncertainty_filter,
                  uncertainty_boost, tau_deg, n_sources, depth_tol
    [schedule]    stage2, stage3, total
    [optim]       lr, lr_end, warmup, s_lr_scale
    [field]       width, layers, color_width, color_layers, n_feat, l_pos, l_dir, dtype,
                  init_radius, inside_out, warm_start_steps
    [run]         seed, out, log_every, checkpoint_every, resolution, eval_points
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .scene import NoiseSpec, PrimitiveScene, camera_orbit, load_scene, sphere_room, table_lamp_room

BUILTIN_SCENES = {"sphere_room": sphere_room, "table_lamp_room": table_lamp_room}
ABLATIONS = ("base", "a", "b", "c", "full")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # [scene]
    spec: str = "builtin:table_lamp_room"
    views: int = 8
    width: int = 64
    height: int = 48
    fov: float = 80.0
    view_seed: int = 0
    view_targets: tuple = (0.35, -0.35)
    gt_resolution: int = 256
    # [noise]
    normal_fraction: float = 0.0
    normal_angle_deg: float = 0.0
    normal_regions: tuple | None = None
    feature_sigma: float = 0.0
    rgb_sigma: float = 0.0
    noise_seed: int = 0
    # [sampling]
    ray_mode: str = "region"
    pdf_mode: str = "exp"
    ray_budget: int = 512
    n_coarse: int = 64
    n_fine: int = 64
    clamp_eps: float = 1e-6
    delta_start: float = 1.0
    delta_end: float = 2.0
    near: float = 0.05
    far_margin: float = 0.6
    coarse_s_min: float = 64.0
    boost_beta: float = 1.0
    # [loss]
    w_rgb: float = 1.0
    w_normal: float = 1.0
    w_feature: float = 0.5
    w_eikonal: float = 0.1
    feature_on: bool = True
    uncertainty_filter: bool = True
    uncertainty_boost: bool = True
    tau_deg: float = 20.0
    n_sources: int = 2
    depth_tol: float = 0.02
    # [schedule]
    stage2: int = 3000
    stage3: int = 5000
    total: int = 8000
    # [optim]
    lr: float = 5e-4
    lr_end: float = 5e-6
    warmup: int = 0
    s_lr_scale: float = 10.0
    # [field]
    geo_width: int = 64
    geo_layers: int = 8
    color_width: int = 64
    color_layers: int = 4
    n_feat: int = 16
    l_pos: int = 6
    l_dir: int = 4
    dtype: str = "float64"
    init_radius: float = 0.9
    inside_out: bool = True
    warm_start_steps: int = 300
    # [run]
    seed: int = 0
    out: str = "runs/default"
    log_every: int = 50
    checkpoint_every: int = 1000
    resolution: int = 128
    eval_points: int = 100_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ray_mode not in ("uniform", "region"):
            raise ConfigError(f"invalid value for sampling.ray_mode: {self.ray_mode!r}")
        if self.pdf_mode not in ("constant", "exp"):
            raise ConfigError(f"invalid value for sampling.pdf_mode: {self.pdf_mode!r}")
        if not 0 < self.stage2 <= self.stage3 <= self.total:
            raise ConfigError("schedule must satisfy 0 < stage2 <= stage3 <= total")
        for name in ("w_rgb", "w_normal", "w_feature", "w_eikonal"):
            if getattr(self, name) < 0:
                raise ConfigError(f"invalid value for loss.{name[2:]}: must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"invalid value for field.dtype: {self.dtype!r}")
        if self.views < 2:
            raise ConfigError("invalid value for scene.views: need >= 2")
        if self.ray_budget < 1 or self.n_coarse < 2 or self.n_fine < 1:
            raise ConfigError("sampling: need ray_budget >= 1, n_coarse >= 2, n_fine >= 1")
        if not self.clamp_eps > 0:
            raise ConfigError("invalid value for sampling.clamp_eps: must be > 0")
        if len(self.view_targets) == 0:
            raise ConfigError("invalid value for scene.view_targets: need at least one value")
        if self.delta_start < 1 or self.delta_end < 1:
            raise ConfigError("invalid value for sampling.delta_*: must be >= 1")

    # -- derived ------------------------------------------------------------

    @property
    def tau(self) -> float:
        return float(np.deg2rad(self.tau_deg))

    def noise(self) -> NoiseSpec:
        return NoiseSpec(normal_fraction=self.normal_fraction,
                         normal_angle=float(np.deg2rad(self.normal_angle_deg)),
                         seed=self.noise_seed, feature_sigma=self.feature_sigma,
                         rgb_sigma=self.rgb_sigma, normal_regions=self.normal_regions)

    def scene(self) -> PrimitiveScene:
        if self.spec.startswith("builtin:"):
            return BUILTIN_SCENES[self.spec.split(":", 1)[1]]()
        return load_scene(self.spec)

    def cameras(self, scene: PrimitiveScene) -> list:
        return camera_orbit(scene, self.views, self.view_seed, self.width, self.height, self.fov,
                            targets=self.view_targets)

    def with_ablation(self, name: str) -> "ExperimentConfig":
        """Switch the four method components to one of the ablation presets."""
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {', '.join(ABLATIONS)}")
        level = ABLATIONS.index(name)
        return dataclasses.replace(
            self,
            ray_mode="region" if level >= 1 else "uniform",
            pdf_mode="exp" if level >= 2 else "constant",
            feature_on=level >= 3,
            uncertainty_filter=level >= 4,
            uncertainty_boost=level >= 4,
        )

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


# section -> {ini key: dataclass field}
SCHEMA = {
    "scene": {"spec": "spec", "views": "views", "width": "width", "height": "height", "fov": "fov",
              "view_seed": "view_seed", "view_targets": "view_targets", "gt_resolution": "gt_resolution"},
    "noise": {"normal_fraction": "normal_fraction", "normal_angle_deg": "normal_angle_deg",
              "normal_regions": "normal_regions", "feature_sigma": "feature_sigma",
              "rgb_sigma": "rgb_sigma", "seed": "noise_seed"},
    "sampling": {"ray_mode": "ray_mode", "pdf_mode": "pdf_mode", "ray_budget": "ray_budget",
                 "n_coarse": "n_coarse", "n_fine": "n_fine", "clamp_eps": "clamp_eps",
                 "delta_start": "delta_start", "delta_end": "delta_end", "near": "near", "far_margin": "far_margin", "coarse_s_min": "coarse_s_min", "boost_beta": "boost_beta"},
    "loss": {"rgb": "w_rgb", "normal": "w_normal", "feature": "w_feature", "eikonal": "w_eikonal",
             "feature_on": "feature_on", "uncertainty_filter": "uncertainty_filter",
             "uncertainty_boost": "uncertainty_boost", "tau_deg": "tau_deg",
             "n_sources": "n_sources", "depth_tol": "depth_tol"},
    "schedule": {"stage2": "stage2", "stage3": "stage3", "total": "total"},
    "optim": {"lr": "lr", "lr_end": "lr_end", "warmup": "warmup", "s_lr_scale": "s_lr_scale"},
    "field": {"width": "geo_width", "layers": "geo_layers", "color_width": "color_width",
              "color_layers": "color_layers", "n_feat": "n_feat", "l_pos": "l_pos", "l_dir": "l_dir",
              "dtype": "dtype", "init_radius": "init_radius", "inside_out": "inside_out",
              "warm_start_steps": "warm_start_steps"},
    "run": {"seed": "seed", "out": "out", "log_every": "log_every",
            "checkpoint_every": "checkpoint_every", "resolution": "resolution",
            "eval_points": "eval_points"},
}

_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(section: str, key: str, attr: str, raw: str):
    kind = _TYPES[attr]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if attr == "view_targets":
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if not vals:
                raise ValueError(raw)
            return vals
        if attr == "normal_regions":
            raw = raw.strip()
            return None if raw in ("", "all") else tuple(int(v) for v in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None, origin: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}".splitlines()[0]) from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            attr = SCHEMA[section][key]
            values[attr] = _convert(section, key, attr, raw)
    spec = values.get("spec")
    if spec is not None and not spec.startswith("builtin:"):
        path = Path(spec)
        if not path.is_absolute() and origin is not None:
            path = origin / path
        if not path.exists():
            raise ConfigError(f"scene.spec path does not exist: {spec}")
        values["spec"] = str(path)
    if spec is not None and spec.startswith("builtin:") and spec.split(":", 1)[1] not in BUILTIN_SCENES:
        raise ConfigError(f"invalid value for scene.spec: unknown builtin {spec!r}")
    base = base or ExperimentConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, origin=path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, attr in keys.items():
            v = getattr(cfg, attr)
            if attr == "normal_regions":
                v = "all" if v is None else " ".join(str(r) for r in v)
            elif attr == "view_targets":
                v = " ".join(repr(float(r)) for r in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
