"""Unified run configuration: one JSON document, one dataclass per section.

Keys are addressed as ``section.field`` (``train.weights.beta`` for nested
values). Command-line flags use the same dotted names, so a config file and
``--section.field`` overrides map 1:1.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .codec import CodecConfig
from .data import DataConfig
from .dsp import MelConfig
from .losses import LossWeights
from .se_model import SEConfig
from .trainer import TrainConfig

VERSION = 1


@dataclass
class PerfConfig:
    runs: int = 5
    threads: int = 1            # 0 leaves BLAS threading at its default
    durations: list[float] = field(default_factory=lambda: [1.0, 5.0, 10.0])
    baseline_rtf_max_seconds: float = 1.0

    def __post_init__(self):
        if self.runs < 5:
            raise ValueError("perf.runs must be >= 5")
        if self.threads < 0:
            raise ValueError("perf.threads must be >= 0")


SECTIONS: dict[str, type] = {
    "codec": CodecConfig,
    "se": SEConfig,
    "train": TrainConfig,
    "mel": MelConfig,
    "data": DataConfig,
    "perf": PerfConfig,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    se: SEConfig = field(default_factory=SEConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    perf: PerfConfig = field(default_factory=PerfConfig)
    version: int = VERSION

    def to_dict(self) -> dict[str, Any]:
        out = {name: _to_plain(getattr(self, name)) for name in SECTIONS}
        out["version"] = self.version
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(doc) - set(SECTIONS) - {"version"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        version = doc.get("version", VERSION)
        if version != VERSION:
            raise ConfigError(f"unsupported config version {version!r} (expected {VERSION})")
        kwargs = {}
        for name, typ in SECTIONS.items():
            try:
                kwargs[name] = _build(typ, doc.get(name, {}), name)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        return cls(**kwargs, version=version)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Apply ``{"section.field[.sub]": value}`` overrides and re-validate."""
        doc = self.to_dict()
        for key, value in overrides.items():
            parts = key.split(".")
            node = doc
            for p in parts[:-1]:
                if not isinstance(node, dict) or p not in node:
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(doc)


def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(typ: type, values: dict[str, Any], where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(typ)
    known = {f.name for f in fields(typ)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, val in values.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, val, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(val, hint, f"{where}.{name}")
    return typ(**kwargs)


def _coerce(val, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if val is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(val, inner[0], where) if len(inner) == 1 else val
    if origin is list:
        if not isinstance(val, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {val!r}")
        return [_coerce(v, args[0], where) for v in val] if args else list(val)
    if hint is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{where}: expected true/false, got {val!r}")
        return val
    if hint is int:
        if isinstance(val, bool) or not isinstance(val, int):
            if isinstance(val, float) and val.is_integer():
                return int(val)
            raise ConfigError(f"{where}: expected an integer, got {val!r}")
        return val
    if hint is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {val!r}")
        return float(val)
    if hint is str and not isinstance(val, str):
        raise ConfigError(f"{where}: expected a string, got {val!r}")
    return val


def flag_specs() -> list[tuple[str, Any]]:
    """Every dotted config key with its type hint, in declaration order."""
    out: list[tuple[str, Any]] = []

    def walk(typ, prefix):
        hints = typing.get_type_hints(typ)
        for f in fields(typ):
            hint = hints[f.name]
            if is_dataclass(hint):
                walk(hint, f"{prefix}{f.name}.")
            else:
                out.append((f"{prefix}{f.name}", hint))

    for name, typ in SECTIONS.items():
        walk(typ, f"{name}.")
    return out


def parse_flag_value(text: str, hint) -> Any:
    """Flags arrive as strings; JSON syntax is accepted for lists, null and booleans."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is list or text in ("null", "true", "false") or text.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"cannot parse {text!r} as JSON") from None
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        hint = inner[0] if len(inner) == 1 else str
    if hint is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got {text!r}") from None
    if hint is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got {text!r}") from None
    if hint is bool:
        raise ConfigError(f"expected true/false, got {text!r}")
    return text


def describe(hint) -> str:
    return getattr(hint, "__name__", None) or str(hint).replace("typing.", "")


__all__ = ["RunConfig", "PerfConfig", "ConfigError", "SECTIONS", "VERSION", "flag_specs",
           "parse_flag_value", "LossWeights", "dataclasses"]
