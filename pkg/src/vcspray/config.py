"""Pipeline configuration: one YAML (or JSON) document, deep-merged over defaults.

Relative paths are resolved against the config file's directory.  Precedence is
flag > config file > default.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

DEFAULTS: dict = {
    "paths": {
        "geotags": "geotags.csv",
        "detections": "detections.csv",
        "out": "out",
        "bands": None,  # {"panel": {band: raster}, "captures": [{"id": ..., band: raster}]}
    },
    "geodesy": {
        "forced_zone": None,
        "default_yaw": 0.0,
        "gsd_m_per_px": 0.0034,
        "camera": None,  # {focal_length_m, pixel_pitch_m, width_px, height_px}
    },
    "radiometry": {
        "gamma": 2.2,
        "unsharp_amount": 1.0,
        "unsharp_radius_px": 2.0,
        "band_offsets": {},
        "panel_region": None,  # [x_min, y_min, x_max, y_max]
        "panel_reflectance": {"blue": 0.60, "green": 0.61, "red": 0.61, "nir": 0.60, "rededge": 0.56},
    },
    "detections": {
        "normalized": False,
        "image_size": [1207, 923],
    },
    "clustering": {"radius_m": 1.0, "min_confidence": 0.25},
    "aco": {
        "alpha": 2.01, "beta": 1.0, "rho": 0.5, "n_ants": 1, "n_iterations": 100,
        "q": None, "tau0": None, "seed": 0, "start": 0,
    },
    "mission": {"alt_m": 4.6, "dwell_s": 2.0, "speed_mps": 2.0},
    "sim": {
        "home": [30.534351, -96.431239],
        "initial_heading_deg": 180.0,
        "dt_s": 0.1,
        "accept_radius_m": 0.5,
        "host": "127.0.0.1",
        "master_port": 5760,
        "out_ports": [14550, 14551, 14552],
        "realtime_factor": 1.0,
    },
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_key(cfg: dict, dotted: str, value) -> None:
    """Set ``section.key`` (any depth) in place."""
    *parents, leaf = dotted.split(".")
    node = cfg
    for p in parents:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[leaf] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    user: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        user = yaml.safe_load(path.read_text()) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        base_dir = path.resolve().parent
    cfg = deep_merge(DEFAULTS, user)
    for item in overrides or []:
        key, value = parse_override(item)
        set_key(cfg, key, value)
    cfg["_base_dir"] = str(base_dir)
    return cfg


def resolve_path(cfg: dict, p: str | Path | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p
