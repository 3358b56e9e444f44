"""Named configuration presets shipped with the package.

Training presets cover the full-scale protocol (three variants x three
dataset profiles) and a desk-scale smoke profile per variant. Dataset
presets describe the desk-scale subset specs used by the smoke matrix.
A preset name works anywhere a config path does.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig


def _preset_root():
    return resources.files("dgan") / "presets"


def list_presets() -> list[str]:
    return sorted(p.name[: -len(".json")] for p in _preset_root().iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    entry = _preset_root() / f"{name}.json"
    if not entry.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return json.loads(entry.read_text())


def load_train_config(name_or_path: str | Path) -> TrainConfig:
    """A config file path, or a shipped preset name."""
    path = Path(name_or_path)
    if path.is_file():
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return TrainConfig.from_dict(raw)
    name = str(name_or_path)
    if (_preset_root() / f"{name}.json").is_file():
        return TrainConfig.from_dict(load_preset(name))
    raise ConfigError(f"no config file or preset named {name_or_path!r}")
