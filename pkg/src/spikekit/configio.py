"""JSON configuration files with ``model``/``train``/``profile``/``io`` sections.

Unknown keys are rejected with their full path; missing keys fall back to
the defaults below, which the ``defaults`` CLI command prints verbatim.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .lif import LifParams
from .model import ModelConfig
from .profiling import EnergyConstants
from .train import TrainConfig

__all__ = [
    "ConfigError",
    "default_config",
    "load_config",
    "model_config_from",
    "train_config_from",
    "energy_constants_from",
]

_DEFAULTS = {
    "model": {
        "timesteps": 4,
        "depth": 2,
        "dim": 64,
        "heads": 4,
        "mlp_ratio": 4.0,
        "in_channels": 3,
        "height": 32,
        "width": 32,
        "num_classes": 4,
        "sps_channels": None,
        "u_th": 1.0,
        "beta": 0.5,
        "v_reset": 0.0,
        "surrogate_width": 0.5,
        "seed": 0,
    },
    "train": {
        "epochs": 5,
        "batch_size": 32,
        "learning_rate": 0.1,
        "lr_schedule": "cosine",
        "seed": 0,
        "loss": "cross_entropy",
        "dataset": {
            "kind": "stripes",
            "n_per_class": 50,
        },
    },
    "profile": {
        "n_samples": 8,
        "e_mac": 4.6,
        "e_ac": 0.9,
    },
    "io": {
        "out_dir": "out",
    },
}


class ConfigError(ValueError):
    """A configuration file problem; the message names the offending path."""


def default_config() -> dict:
    return copy.deepcopy(_DEFAULTS)


def _merge(defaults, overrides, path: str) -> dict:
    merged = copy.deepcopy(defaults)
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    for key, value in overrides.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"{here}: unknown key")
        default = defaults[key]
        if isinstance(default, dict):
            merged[key] = _merge(default, value, here)
            continue
        if default is None or value is None:
            merged[key] = value
            continue
        if isinstance(default, bool) != isinstance(value, bool):
            raise ConfigError(f"{here}: expected {type(default).__name__}")
        if isinstance(default, (int, float)) and isinstance(value, (int, float)):
            merged[key] = value
        elif isinstance(value, type(default)):
            merged[key] = value
        else:
            raise ConfigError(
                f"{here}: expected {type(default).__name__}, got {type(value).__name__}"
            )
    return merged


def load_config(path) -> dict:
    """Parse and validate a config file, merged over the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return _merge(_DEFAULTS, raw, "")


def model_config_from(config: dict) -> ModelConfig:
    m = config["model"]
    try:
        lif = LifParams(
            u_th=float(m["u_th"]),
            beta=float(m["beta"]),
            v_reset=float(m["v_reset"]),
            surrogate_width=float(m["surrogate_width"]),
        )
        channels = m["sps_channels"]
        return ModelConfig(
            timesteps=int(m["timesteps"]),
            depth=int(m["depth"]),
            dim=int(m["dim"]),
            heads=int(m["heads"]),
            mlp_ratio=float(m["mlp_ratio"]),
            in_channels=int(m["in_channels"]),
            height=int(m["height"]),
            width=int(m["width"]),
            num_classes=int(m["num_classes"]),
            sps_channels=None if channels is None else tuple(int(c) for c in channels),
            lif=lif,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def train_config_from(config: dict) -> TrainConfig:
    tr = config["train"]
    try:
        return TrainConfig(
            epochs=int(tr["epochs"]),
            batch_size=int(tr["batch_size"]),
            learning_rate=float(tr["learning_rate"]),
            lr_schedule=str(tr["lr_schedule"]),
            seed=int(tr["seed"]),
            loss=str(tr["loss"]),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def energy_constants_from(config: dict) -> EnergyConstants:
    pr = config["profile"]
    try:
        return EnergyConstants(e_mac=float(pr["e_mac"]), e_ac=float(pr["e_ac"]))
    except ValueError as exc:
        raise ConfigError(f"profile: {exc}") from exc
