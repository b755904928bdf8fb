"""Flat ``key = value`` configuration files.

Keys may be dotted for namespacing (``solver.lane_gate = 1.0``); ``#`` starts
a comment. Values are parsed as bool, int, float or left as strings.
"""

from __future__ import annotations

import dataclasses
import os

from .errors import FormatError

_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def loads_config(text: str) -> dict:
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key or any(c.isspace() for c in key):
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", no)
        if key in out:
            raise FormatError(f"duplicate key {key!r}", no)
        out[key] = parse_value(value)
    return out


def load_config(path: os.PathLike | str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in cfg.items())


def section(cfg: dict, prefix: str) -> dict:
    """Entries under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def apply_section(obj, values: dict, aliases: dict | None = None):
    """Return a copy of dataclass ``obj`` with fields overridden by ``values``.

    Unknown keys raise ``FormatError``; numeric fields accept ints for floats.
    """
    aliases = aliases or {}
    fields = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in values.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise FormatError(f"unknown setting {key!r} for {type(obj).__name__}")
        current = getattr(obj, name)
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        updates[name] = value
    return dataclasses.replace(obj, **updates)
