"""Pipeline configuration: flat dotted keys, YAML file, command-line overrides."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .augment import PRESETS, AugmentConfig
from .errors import ConfigError
from .filtercheck import FilterTolerances
from .grasp import GraspConfig, OptimizerSettings

DEFAULTS = {
    "paths.bundle": "",
    "paths.tasks": "",
    "paths.hand_model": "",            # empty: bundled reference hand
    "world.workspace_x": 0.6,
    "world.view_method": "exact",
    "grasp.seeds": 16,
    "grasp.finger_count": 3,
    "grasp.mu": 0.5,
    "grasp.standoff": 0.06,
    "grasp.lambda_t": 1.0,
    "grasp.lambda_r": 0.3,
    "grasp.eps": 0.02,
    "grasp.c_r": 0.1,
    "grasp.reach_radius": 1.0,
    "grasp.max_iter": 200,
    "augment.preset": "appendix-a2",
    "augment.scale_lo": 0.8,
    "augment.scale_hi": 1.2,
    "augment.object_xy": 0.10,
    "augment.object_yaw_deg": 30.0,
    "augment.camera_position": 0.05,
    "augment.camera_rotation_deg": 5.0,
    "augment.p_drop": 0.15,
    "augment.p_noise": 0.15,
    "augment.sigma": 0.015,
    "augment.delta": 0.01,
    "augment.workspace_x_min": 0.2,
    "augment.workspace_x_max": 1.1,
    "augment.workspace_y_min": -0.6,
    "augment.workspace_y_max": 0.6,
    "dataset.count": 100,
    "filter.translation_tol": 0.02,
    "filter.rotation_tol_deg": 15.0,
    "filter.penetration_tol": 0.002,
    "filter.judge_command": "",
    "filter.judge_timeout": 30.0,
    "filter.judge_concurrency": 4,
    "filter.description": "",
    "seed": 0,
    "jobs": 1,
}

# preset values expressed in config keys
_PRESET_KEYS = {
    "scale_range": ("augment.scale_lo", "augment.scale_hi"),
    "object_xy": "augment.object_xy",
    "object_yaw": "augment.object_yaw_deg",
    "camera_position": "augment.camera_position",
    "camera_rotation": "augment.camera_rotation_deg",
    "p_drop": "augment.p_drop",
    "p_noise": "augment.p_noise",
    "sigma": "augment.sigma",
}


def flatten(d, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        return "" if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None


def preset_values(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown augmentation preset {name!r}; known: {sorted(PRESETS)}")
    out = {}
    for field_name, v in PRESETS[name].items():
        key = _PRESET_KEYS[field_name]
        if field_name == "scale_range":
            out[key[0]], out[key[1]] = v
        elif field_name in ("object_yaw", "camera_rotation"):
            out[key] = math.degrees(v)
        else:
            out[key] = v
    return out


def load_config(path=None, overrides=None, preset: str = None) -> dict:
    """Defaults, then the preset, then the file, then explicit overrides."""
    file_values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: expected a mapping")
        file_values = flatten(data)
        base = p.parent
        for k in ("paths.bundle", "paths.tasks", "paths.hand_model"):
            v = file_values.get(k)
            if v and not Path(v).is_absolute():
                file_values[k] = str(base / v)
    overrides = dict(overrides or {})
    for k in list(file_values) + list(overrides):
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}")
    cfg = dict(DEFAULTS)
    name = overrides.get("augment.preset", preset or file_values.get("augment.preset", DEFAULTS["augment.preset"]))
    cfg.update(preset_values(str(name)))
    cfg.update(file_values)
    cfg.update(overrides)
    cfg["augment.preset"] = str(name)
    return {k: _coerce(k, v) for k, v in cfg.items()}


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(dict(sorted(cfg.items())), sort_keys=True, default_flow_style=False)


def augment_config(cfg: dict) -> AugmentConfig:
    return AugmentConfig(
        scale_range=(cfg["augment.scale_lo"], cfg["augment.scale_hi"]),
        object_xy=cfg["augment.object_xy"],
        object_yaw=math.radians(cfg["augment.object_yaw_deg"]),
        camera_position=cfg["augment.camera_position"],
        camera_rotation=math.radians(cfg["augment.camera_rotation_deg"]),
        p_drop=cfg["augment.p_drop"],
        p_noise=cfg["augment.p_noise"],
        sigma=cfg["augment.sigma"],
        delta=cfg["augment.delta"],
        workspace_x=(cfg["augment.workspace_x_min"], cfg["augment.workspace_x_max"]),
        workspace_y=(cfg["augment.workspace_y_min"], cfg["augment.workspace_y_max"]),
        seed=cfg["seed"],
    )


def grasp_config(cfg: dict) -> GraspConfig:
    if cfg["grasp.seeds"] < 1:
        raise ConfigError("grasp.seeds must be >= 1")
    return GraspConfig(seeds=cfg["grasp.seeds"], standoff=cfg["grasp.standoff"], mu=cfg["grasp.mu"],
                       lambda_t=cfg["grasp.lambda_t"], lambda_r=cfg["grasp.lambda_r"], eps=cfg["grasp.eps"],
                       c_r=cfg["grasp.c_r"], reach_radius=cfg["grasp.reach_radius"],
                       settings=OptimizerSettings(max_iter=cfg["grasp.max_iter"]))


def filter_tolerances(cfg: dict) -> FilterTolerances:
    return FilterTolerances(translation=cfg["filter.translation_tol"],
                            rotation=math.radians(cfg["filter.rotation_tol_deg"]),
                            penetration=cfg["filter.penetration_tol"])


@dataclass
class PipelineConfig:
    """Validated view of a config dict."""

    values: dict

    def __post_init__(self):
        v = self.values
        if v["dataset.count"] < 1:
            raise ConfigError("dataset.count must be >= 1")
        if v["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")
        if v["world.workspace_x"] <= 0:
            raise ConfigError("world.workspace_x must be positive")
        augment_config(v)      # raises ConfigError on bad augmentation values

    def __getitem__(self, key):
        return self.values[key]

    def require_paths(self, *keys):
        for k in keys:
            p = self.values[k]
            if not p:
                raise ConfigError(f"{k} is not set")
            if not Path(p).exists():
                raise ConfigError(f"{k}: path does not exist: {p}")
