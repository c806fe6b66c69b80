"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored; values may be quoted. Keys not
declared by the target dataclass are errors.
"""

from __future__ import annotations

import dataclasses
import shlex
import typing


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        value = value.strip()
        if value and value[0] in "\"'":
            try:
                parts = shlex.split(value, comments=True)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
            value = parts[0] if parts else ""
        else:
            value = value.split("#", 1)[0].strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def _convert(key: str, value, typ):
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(typ)
    if origin is typing.Union or str(typ).startswith("typing.Optional") or " | " in str(typ):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if value.lower() in ("", "none", "null"):
            return None
        typ = args[0] if args else str
    try:
        if typ is bool:
            low = value.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None
    return value


def build(cls, values: dict, base=None):
    """Instantiate dataclass ``cls`` from string ``values`` layered over ``base``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _convert(k, v, hints[k]) for k, v in values.items()}
    base = base if base is not None else cls()
    return dataclasses.replace(base, **kwargs)


def format_config(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, str):
            v = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
