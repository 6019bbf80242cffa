"""Run configuration: sensor presets, module parameters, YAML loading.

Configuration layers, later wins: built-in defaults, values from a YAML
config file, command-line flags.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from scanalign.normals import (
    DEFAULT_ALPHA,
    DEFAULT_HALF_WINDOW,
    DEFAULT_MIN_VALID_NEIGHBORS,
)
from scanalign.odometry import Backtracking, FixedStep, OptimizerConfig
from scanalign.range_image import ProjectionConfig


class ConfigError(ValueError):
    """Config file is malformed or references unknown entries."""


@dataclass(frozen=True)
class NormalsParams:
    alpha: float = DEFAULT_ALPHA
    min_valid_neighbors: int = DEFAULT_MIN_VALID_NEIGHBORS
    half_window: int = DEFAULT_HALF_WINDOW


@dataclass(frozen=True)
class LossParams:
    lam: float = 1.0
    p2n: bool = True
    n2n: bool = True
    max_distance: float | None = None
    strict_nk_denominator: bool = False


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path | None = None
    scan_format: str = "kitti_bin"
    sensor: str = "vlp16"
    normals: NormalsParams = field(default_factory=NormalsParams)
    loss: LossParams = field(default_factory=LossParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    deterministic_mode: bool = False
    extra_presets: dict = field(default_factory=dict)

    def projection(self) -> ProjectionConfig:
        return resolve_preset(self.sensor, self.extra_presets)


def builtin_presets() -> dict:
    source = importlib.resources.files("scanalign.data").joinpath("presets.yaml")
    payload = yaml.safe_load(source.read_text())
    return dict(payload["presets"])


def resolve_preset(name: str, extra: dict | None = None) -> ProjectionConfig:
    table = builtin_presets()
    if extra:
        table.update(extra)
    if name not in table:
        known = ", ".join(sorted(table))
        raise ConfigError(f"unknown sensor preset {name!r} (known: {known})")
    entry = table[name]
    try:
        return ProjectionConfig.from_degrees(
            height=int(entry["height"]),
            width=int(entry["width"]),
            fov_up_deg=float(entry["fov_up_deg"]),
            fov_down_deg=float(entry["fov_down_deg"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"preset {name!r} is malformed: {exc}") from exc


def _line_search_from_mapping(payload: dict):
    kind = payload.get("kind", "backtracking")
    if kind == "backtracking":
        return Backtracking(
            beta=float(payload.get("beta", 0.5)), c=float(payload.get("c", 1e-4))
        )
    if kind == "fixed_step":
        if "size" not in payload:
            raise ConfigError("fixed_step line search requires a size")
        return FixedStep(size=float(payload["size"]))
    raise ConfigError(f"unknown line search kind {kind!r}")


def load_config(path: str | Path | None = None) -> RunConfig:
    """Defaults, optionally overlaid with a YAML file."""
    cfg = RunConfig()
    if path is None:
        return cfg
    payload = yaml.safe_load(Path(path).read_text())
    if payload is None:
        return cfg
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    known = {
        "dataset_root", "scan_format", "sensor", "normals", "loss",
        "optimizer", "deterministic_mode", "presets",
    }
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")

    if "dataset_root" in payload and payload["dataset_root"] is not None:
        cfg = replace(cfg, dataset_root=Path(payload["dataset_root"]))
    if "scan_format" in payload:
        if payload["scan_format"] != "kitti_bin":
            raise ConfigError(f"unsupported scan format {payload['scan_format']!r}")
        cfg = replace(cfg, scan_format=payload["scan_format"])
    if "sensor" in payload:
        cfg = replace(cfg, sensor=str(payload["sensor"]))
    if "deterministic_mode" in payload:
        cfg = replace(cfg, deterministic_mode=bool(payload["deterministic_mode"]))
    if "presets" in payload:
        cfg = replace(cfg, extra_presets=dict(payload["presets"]))

    if "normals" in payload:
        section = payload["normals"] or {}
        cfg = replace(
            cfg,
            normals=NormalsParams(
                alpha=float(section.get("alpha", DEFAULT_ALPHA)),
                min_valid_neighbors=int(
                    section.get("min_valid_neighbors", DEFAULT_MIN_VALID_NEIGHBORS)
                ),
                half_window=int(section.get("half_window", DEFAULT_HALF_WINDOW)),
            ),
        )
    if "loss" in payload:
        section = payload["loss"] or {}
        max_distance = section.get("max_distance", None)
        cfg = replace(
            cfg,
            loss=LossParams(
                lam=float(section.get("lambda", 1.0)),
                p2n=bool(section.get("p2n", True)),
                n2n=bool(section.get("n2n", True)),
                max_distance=None if max_distance is None else float(max_distance),
                strict_nk_denominator=bool(section.get("strict_nk_denominator", False)),
            ),
        )
    if "optimizer" in payload:
        section = payload["optimizer"] or {}
        line_search = _line_search_from_mapping(section.get("line_search", {}) or {})
        default = OptimizerConfig()
        max_dist = section.get(
            "max_correspondence_distance", default.max_correspondence_distance
        )
        cfg = replace(
            cfg,
            optimizer=OptimizerConfig(
                max_iterations=int(section.get("max_iterations", default.max_iterations)),
                loss_tolerance=float(section.get("loss_tolerance", default.loss_tolerance)),
                step_tolerance=float(section.get("step_tolerance", default.step_tolerance)),
                recorrespond_every=int(
                    section.get("recorrespond_every", default.recorrespond_every)
                ),
                initializer=str(section.get("initializer", default.initializer)),
                line_search=line_search,
                max_correspondence_distance=None if max_dist is None else float(max_dist),
            ),
        )
    return cfg
