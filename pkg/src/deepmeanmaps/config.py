"""Plain-text run configuration: ``[section]`` groups of ``key = value`` lines.

Every key must be declared in :data:`SCHEMA`; anything else is rejected so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path

from .network import SynthNetConfig
from .synth import SynthConfig
from .trainer import SgdConfig

OUTPUT_ROOT_ENV = "DMM_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _defaults(cls, skip=(), **override):
    inst = cls.desk() if hasattr(cls, "desk") else cls()
    out = {f.name: getattr(inst, f.name) for f in fields(cls) if f.name not in skip}
    out.update(override)
    return out


# section -> key -> default; the default's type is the key's type
SCHEMA: dict[str, dict] = {
    "run": {"master_seed": 0, "name": "run", "threads": 1},
    "data": _defaults(SynthConfig, skip=("master_seed",)),
    "network": {"kind": "mml", "mode": "replacing", "variants": "none", "head_width": 256,
                "variant_width": 1024, "dropout_rate": 0.5,
                **_defaults(SynthNetConfig, skip=("classes", "image_size", "channels"))},
    "sgd": _defaults(SgdConfig, skip=("seed",), decay_every=0),
    "experiment": {"small_per_class": 10},
}
# keys whose value may be written as "auto" (stored as 0)
_AUTO = {("sgd", "decay_every")}


def _coerce(section: str, key: str, text: str):
    default = SCHEMA[section][key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            if (section, key) in _AUTO and text.lower() == "auto":
                return 0
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {text!r} as {type(default).__name__}") from None


class RunConfig:
    """Fully resolved settings: schema defaults, then file values, then overrides."""

    def __init__(self, values: dict[str, dict] | None = None):
        self.values = {s: dict(keys) for s, keys in SCHEMA.items()}
        for section, keys in (values or {}).items():
            for key, value in keys.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; known: {', '.join(SCHEMA)}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]; known: {', '.join(SCHEMA[section])}")
        text = _fmt(value) if not isinstance(value, str) else value
        self.values[section][key] = _coerce(section, key, text)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    @classmethod
    def parse(cls, text: str, overrides=()) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str  # keys are case-sensitive
        try:
            cp.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"malformed config: {err}") from None
        cfg = cls()
        for section in cp.sections():
            for key, value in cp.items(section):
                cfg.set(section, key, value)
        for item in overrides:
            cfg.apply_override(item)
        return cfg

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.parse(p.read_text(), overrides)

    def apply_override(self, item: str) -> None:
        """``section.key=value``."""
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        self.set(section, key.strip(), value.strip())

    def serialize(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {_fmt(v)}" for key, v in keys.items())
            lines.append("")
        return "\n".join(lines)

    # -- typed views ----------------------------------------------------

    def synth_config(self) -> SynthConfig:
        return SynthConfig(master_seed=self["run"]["master_seed"], **self["data"])

    def net_config(self) -> SynthNetConfig:
        n, d = self["network"], self["data"]
        keys = {f.name for f in fields(SynthNetConfig)}
        return SynthNetConfig(classes=d["classes"], image_size=d["image_size"],
                              **{k: v for k, v in n.items() if k in keys})

    def sgd_config(self, seed: int) -> SgdConfig:
        s = dict(self["sgd"])
        s["decay_every"] = s["decay_every"] or None
        return SgdConfig(seed=seed, **s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
