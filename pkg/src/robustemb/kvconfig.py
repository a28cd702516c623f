"""Flat ``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import math
import typing


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, eq, value = s.partition("=")
        if not eq or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        return parse_kv(f.read())


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    if value is None:
        return "none"
    return str(value)


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(tp)):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {getattr(tp, '__name__', tp)}") from None


def build_dataclass(cls, values: dict[str, str], prefix: str = ""):
    """Instantiate ``cls`` from string values, keys optionally prefixed ``prefix.``."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}" if prefix else f.name
        if key in values:
            kwargs[f.name] = _coerce(values[key], hints[f.name], key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or cls.__name__}: {exc}") from None


def known_keys(cls, prefix: str = "") -> set[str]:
    return {f"{prefix}.{f.name}" if prefix else f.name for f in dataclasses.fields(cls)}


def dump_dataclass(obj, prefix: str = "") -> list[str]:
    lines = []
    for f in dataclasses.fields(obj):
        key = f"{prefix}.{f.name}" if prefix else f.name
        lines.append(f"{key} = {format_value(getattr(obj, f.name))}")
    return lines
