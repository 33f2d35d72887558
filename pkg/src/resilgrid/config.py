"""Pipeline configuration, deterministic seed substreams, and error types."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ConfigError(Exception):
    """Bad or missing configuration (exit code 2)."""


class DataError(Exception):
    """Bad or missing input data (exit code 3)."""


def substream_seed(root_seed: int, *parts) -> int:
    """Derive a named 63-bit child seed from a root seed.

    All randomness in a run flows from one root seed through named
    substreams, e.g. ``substream_seed(seed, "sdae", 0)``, so stages and
    grid-search configs are reproducible independently of each other.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


def substream_rng(root_seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root_seed, *parts))


# Ten road classes by default: five principal classes plus their link
# variants. Speeds in km/h; link classes run 10 km/h below the parent,
# floored at 30.
DEFAULT_ROAD_CLASSES = [
    "motorway", "trunk", "primary", "secondary", "tertiary",
    "motorway_link", "trunk_link", "primary_link", "secondary_link",
    "tertiary_link",
]

DEFAULT_SPEED_TABLE = {
    "motorway": 100.0, "trunk": 80.0, "primary": 60.0,
    "secondary": 50.0, "tertiary": 40.0,
    "motorway_link": 90.0, "trunk_link": 70.0, "primary_link": 50.0,
    "secondary_link": 40.0, "tertiary_link": 30.0,
}

DEFAULT_CONFIG: dict[str, Any] = {
    "grid": {"bbox": None, "cell_size": 2000.0},
    "layers": {
        "building_age": {"path": None, "value_property": "value"},
        "poverty_rate": {"path": None, "value_property": "value"},
        "social_connectedness": {"path": None, "value_property": "value"},
        "internet_speed": {"path": None, "value_property": "value"},
        "education_level": {"path": None, "value_property": "value"},
        "greenspace": {"path": None, "filter_property": None, "filter_value": None},
        "towers": {"path": None, "age_field": "age", "range_field": "range"},
        "healthcare": {"path": None, "category_field": None, "categories": None},
        "roads": {"path": None, "class_property": "class"},
    },
    "mask": None,
    "risk": None,
    "features": {
        "road_classes": DEFAULT_ROAD_CLASSES,
        "speed_table": DEFAULT_SPEED_TABLE,
        "healthcare_threshold_minutes": 30.0,
        "road_metric": "density",
    },
    "train": {
        "learning_rate": 0.1,
        "batch_size": 256,
        "epochs": 200,
        "finetune_epochs": None,
        "dropout_rate": 0.2,
        "momentum": 0.0,
    },
    "dims": {"hidden": [500, 500, 2000], "embedding": 10},
    "dec": {
        "k": 5,
        "max_iterations": 100,
        "target_update_interval": 1,
        "stop_tolerance": 0.001,
    },
    "forest": {"n_trees": 200, "test_fraction": 0.2},
    "grid_search": {
        "enabled": False,
        "embedding_space": [10, 12, 24, 36],
        "k_space": [4, 5, 6, 7],
    },
    "scenario": {
        "levels": [1],
        "multipliers": {"healthcare_access": 1.2, "road_density": 1.2},
        "seed_policy": "reuse",
    },
    "moran": {"permutations": 999},
    "seed": None,
    "output_dir": "out",
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    """Validated run configuration. ``raw`` holds the merged dict."""

    raw: dict[str, Any]
    base_dir: str = "."
    source_path: str | None = None
    overrides: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".",
                  source_path: str | None = None) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        merged = _merge(DEFAULT_CONFIG, data)
        cfg = cls(raw=merged, base_dir=base_dir, source_path=source_path)
        cfg._validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)),
                             source_path=path)

    def _validate(self) -> None:
        raw = self.raw
        if raw["seed"] is None:
            raise ConfigError("config requires an explicit integer seed "
                              "(wall-clock seeding is not supported)")
        if not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an integer")
        bbox = raw["grid"]["bbox"]
        if bbox is not None:
            if len(bbox) != 4:
                raise ConfigError("grid.bbox must be [min_x, min_y, max_x, max_y]")
        if raw["grid"]["cell_size"] <= 0:
            raise ConfigError("grid.cell_size must be > 0")
        tr = raw["train"]
        if tr["learning_rate"] <= 0:
            raise ConfigError("train.learning_rate must be > 0")
        if not 0 <= tr["dropout_rate"] < 1:
            raise ConfigError("train.dropout_rate must be in [0, 1)")
        if tr["batch_size"] < 1:
            raise ConfigError("train.batch_size must be >= 1")
        dec = raw["dec"]
        if dec["k"] < 2:
            raise ConfigError("dec.k must be >= 2")
        if not 0 <= dec["stop_tolerance"] <= 1:
            raise ConfigError("dec.stop_tolerance must be in [0, 1]")
        metric = raw["features"]["road_metric"]
        if metric not in ("density", "length"):
            raise ConfigError(f"features.road_metric must be 'density' or 'length', got {metric!r}")
        policy = raw["scenario"]["seed_policy"]
        if policy not in ("reuse", "substream"):
            raise ConfigError(f"scenario.seed_policy must be 'reuse' or 'substream', got {policy!r}")

    def resolve_path(self, path: str | None) -> str | None:
        if path is None:
            return None
        if os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.base_dir, path))

    def layer_path(self, name: str, required: bool = True) -> str | None:
        entry = self.raw["layers"].get(name)
        path = self.resolve_path(entry.get("path") if entry else None)
        if path is None:
            if required:
                raise ConfigError(f"layers.{name}.path is not configured")
            return None
        if not os.path.exists(path):
            raise DataError(f"layers.{name}: file not found: {path}")
        return path

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def output_dir(self) -> str:
        return self.resolve_path(self.raw["output_dir"])

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()
