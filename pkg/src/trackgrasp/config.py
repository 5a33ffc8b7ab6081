"""Configuration tree for the simulator.

Every tunable default lives here as a frozen dataclass field, loadable from a
YAML or JSON mapping with the same nesting, e.g.

    ekf:
      refeed_rho: 1.4
    control:
      k_ff: 0.0
    episode:
      workspace: extended

Unknown keys raise, so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .control import ControlGains
from .ekf import NoiseConfig
from .grasping import GraspTolerances, RetryPolicy
from .perception import CameraModel, PerceptionConfig
from .world import GripperLimits

__all__ = [
    "GraspSettings",
    "EpisodeSettings",
    "SimConfig",
    "ConfigError",
    "load_config",
    "config_from_mapping",
    "config_to_dict",
]


class ConfigError(ValueError):
    """Bad configuration file or override."""


@dataclass(frozen=True)
class GraspSettings:
    pool_size: int = 5
    eps_pos: float = 0.01                   # m, trigger bound
    eps_ang: float = math.radians(10.0)     # rad, trigger bound
    tolerances: GraspTolerances = field(default_factory=GraspTolerances)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    object_extent: tuple = (0.05, 0.05, 0.10)
    select_w_pos: float = 1.0
    select_w_rot: float = 0.3
    select_w_score: float = 0.05


@dataclass(frozen=True)
class EpisodeSettings:
    t_max: float = 35.0
    dt: float = 0.05
    workspace: str = "base"
    scene: str = "regular"                  # regular | complex
    ekf_enabled: bool = True
    stage: int = 5                          # reward-logging stage
    start_position: tuple = (0.50, 0.00, 0.85)
    lift_height: float = 0.12
    complex_wall_offset: float = 0.25       # m lateral offset of the two walls
    tracking_failure_dist: float = 0.25     # m estimate-vs-true error ...
    tracking_failure_time: float = 2.0      # ... sustained this long, in seconds
    recovery_radius: float = 0.45           # m viewpoint sphere around the mean
    recovery_samples: int = 32


@dataclass(frozen=True)
class SimConfig:
    ekf: NoiseConfig = field(default_factory=NoiseConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    gripper: GripperLimits = field(default_factory=GripperLimits)
    grasp: GraspSettings = field(default_factory=GraspSettings)
    control: ControlGains = field(default_factory=ControlGains)
    episode: EpisodeSettings = field(default_factory=EpisodeSettings)


def _merge(obj, data, path):
    """Return obj with the mapping applied; recurses through dataclasses."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping at {path or 'top level'}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        updates[key] = _coerce(current, value, path + key + ".")
    return dataclasses.replace(obj, **updates)


def _coerce(current, value, path):
    if dataclasses.is_dataclass(current) and isinstance(value, dict):
        return _merge(current, value, path)
    if isinstance(current, Enum):
        return type(current)(value)
    if isinstance(current, np.ndarray):
        return np.asarray(value, dtype=float)
    if isinstance(current, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean at {path[:-1]!r}")
        return value
    if isinstance(current, (int, float)) and isinstance(value, (int, float)):
        return type(current)(value)
    if isinstance(current, str) and isinstance(value, str):
        return value
    if current is None:
        return value
    raise ConfigError(f"cannot apply {type(value).__name__} at {path[:-1]!r}")


def config_from_mapping(data: dict | None, base: SimConfig | None = None) -> SimConfig:
    cfg = base if base is not None else SimConfig()
    if not data:
        return cfg
    return _merge(cfg, data, "")


def _to_plain(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def config_to_dict(cfg: SimConfig) -> dict:
    """Plain nested dict mirroring the dataclass tree; YAML/JSON safe."""
    return _to_plain(cfg)


def load_config(path: str | Path | None, overrides: dict | None = None) -> SimConfig:
    """Build a SimConfig from an optional file plus an optional override map."""
    cfg = SimConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        try:
            if p.suffix in (".json",):
                data = json.loads(text)
            else:
                data = yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"could not parse {p}: {exc}") from exc
        if data is not None:
            cfg = config_from_mapping(data, cfg)
    if overrides:
        cfg = config_from_mapping(overrides, cfg)
    return cfg
