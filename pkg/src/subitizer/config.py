"""Run configuration: ``key = value`` files with section headers."""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from subitizer.errors import ConfigError
from subitizer.experiments import ExperimentPreset, LrSchedule
from subitizer.models import Widths

_OPTIONAL_FLOAT = object()

PRESET_KEYS = {
    "variant": str, "modules": str, "pretrain_mode": str, "association_init": str,
    "regime": str, "distribution": str, "epochs": float, "eval_every": int,
    "learning_rate": _OPTIONAL_FLOAT, "pretrain_lr": _OPTIONAL_FLOAT,
    "pretrain_iterations": int, "motor_first_epochs": float, "motor_first_lr": float,
    "snapshot_epoch": _OPTIONAL_FLOAT, "stop_at": _OPTIONAL_FLOAT,
}
SECTIONS = {
    "run": {"seed": int, "seeds": int, "threads": int, "out": str, "motor_table": str, "plot": bool},
    "preset": PRESET_KEYS,
    "widths": {"visual": int, "association": int, "visuomotor": int},
    "motor_lr": {"kind": str, "base": float, "span": float},
    "sweep": {"lrs": "floats", "modes": "strs", "threshold": float},
}


def default_out() -> str:
    return os.environ.get("SUBITIZER_OUT", "results")


@dataclass
class RunConfig:
    preset: str | None = None
    seed: int = 0
    seeds: int | None = None  # None: the command's default
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str = field(default_factory=default_out)
    motor_table: str | None = None
    plot: bool = False
    preset_overrides: dict = field(default_factory=dict)
    width_overrides: dict = field(default_factory=dict)
    motor_lr_overrides: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def apply(self, preset: ExperimentPreset) -> ExperimentPreset:
        """``preset`` with every override from this config applied."""
        changes = dict(self.preset_overrides)
        if self.width_overrides:
            changes["widths"] = Widths(**{**asdict(preset.widths), **self.width_overrides})
        if self.motor_lr_overrides:
            changes["motor_lr"] = LrSchedule(**{**asdict(preset.motor_lr), **self.motor_lr_overrides})
        return replace(preset, **changes) if changes else preset

    def manifest(self) -> dict:
        return asdict(self)


def _convert(section: str, key: str, raw: str, kind):
    where = f"[{section}] {key}"
    try:
        if kind is _OPTIONAL_FLOAT:
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "yes", "1")
        if kind == "floats":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "strs":
            return [v.strip() for v in raw.split(",") if v.strip()]
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value for {where}: {exc}") from None


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = replace(base) if base is not None else RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        allowed = SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"{source}: unknown key {key!r} in section [{section}]")
            value = _convert(section, key, raw, allowed[key])
            if section == "run":
                setattr(cfg, key, value)
            elif section == "preset":
                cfg.preset_overrides = {**cfg.preset_overrides, key: value}
            elif section == "widths":
                cfg.width_overrides = {**cfg.width_overrides, key: value}
            elif section == "motor_lr":
                cfg.motor_lr_overrides = {**cfg.motor_lr_overrides, key: value}
            else:
                cfg.sweep = {**cfg.sweep, key: value}
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base, str(path))
