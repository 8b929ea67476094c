"""Sectioned run configuration: INI-style files, overrides, snapshots.

One section per pipeline stage plus ``[run]`` for global settings.  Files
use ``[section]`` headers, ``key = value`` lines and ``#`` comments.
Unknown sections or keys are rejected by name; every key has a default, so
an empty file is a valid (all-defaults) configuration.  A resolved
snapshot printed by :func:`format_config` parses back to an equal config.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .finetune import FinetuneConfig
from .moco import PretrainConfig
from .preprocess import PreprocessConfig
from .synth import SynthSpec


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    workers: int = 0  # parallel view-pair construction; 0 = serial
    torch_threads: int = 0  # 0 = leave the torch default
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)


SECTIONS: dict[str, type] = {
    "run": RunSettings,
    "preprocess": PreprocessConfig,
    "augment": AugmentConfig,
    "encoder": EncoderConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "synth": SynthSpec,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings
    preprocess: PreprocessConfig
    augment: AugmentConfig
    encoder: EncoderConfig
    pretrain: PretrainConfig
    finetune: FinetuneConfig
    synth: SynthSpec

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(**{name: section() for name, section in SECTIONS.items()})


def _convert(raw: str, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.strip().lower() in ("none", "null", ""):
            return None
        return _convert(raw, args[0], where)
    if tp is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if tp is int:
        try:
            return int(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from exc
    if tp is float:
        try:
            return float(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from exc
    if tp is str:
        return raw.strip()
    if origin is tuple:
        args = typing.get_args(tp)
        parts = [p.strip() for p in raw.strip().strip("()").split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(p, args[0], where) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(_convert(p, a, where) for p, a in zip(parts, args))
    raise ConfigError(f"{where}: unsupported option type {tp!r}")


def _section_fields(section_cls: type) -> dict[str, type]:
    hints = typing.get_type_hints(section_cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(section_cls)}


def _build(section_values: dict[str, dict[str, str]]) -> RunConfig:
    kwargs = {}
    for name, section_cls in SECTIONS.items():
        fields = _section_fields(section_cls)
        raw = section_values.get(name, {})
        converted = {}
        for key, value in raw.items():
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            converted[key] = _convert(value, fields[key], f"[{name}] {key}")
        try:
            kwargs[name] = section_cls(**converted)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid value in section [{name}]: {exc}") from exc
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a config file (or defaults when ``path`` is None)."""
    if path is None:
        return RunConfig.default()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        values[section] = dict(parser.items(section))
    return _build(values)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings on top of a config."""
    updates: dict[str, dict[str, str]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        updates.setdefault(section, {})[key.strip()] = value.strip()

    result = config
    for section, raw in updates.items():
        section_cls = SECTIONS[section]
        fields = _section_fields(section_cls)
        current = getattr(result, section)
        converted = {}
        for key, value in raw.items():
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            converted[key] = _convert(value, fields[key], f"[{section}] {key}")
        try:
            new_section = dataclasses.replace(current, **converted)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid value in section [{section}]: {exc}") from exc
        result = dataclasses.replace(result, **{section: new_section})
    return result


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: RunConfig) -> str:
    """Render the fully resolved config; parses back to an equal config."""
    lines = []
    for name, section_cls in SECTIONS.items():
        lines.append(f"[{name}]")
        section = getattr(config, name)
        for f in dataclasses.fields(section_cls):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)
