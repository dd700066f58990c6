"""Flat ``key = value`` configuration files.

Keys are dataclass field names.  Training keys also accept the short CLI flag
spellings (``lr``, ``batch``, ``epochs`` ...), and simulator keys may carry a
``sim.`` prefix, so a config file and a command line are interchangeable.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Mapping

TRAIN_ALIASES = {
    "lr": "learning_rate",
    "batch": "batch_size",
    "epochs": "max_epochs",
    "patience": "early_stop_patience",
    "min_delta": "early_stop_min_delta",
    "k": "K",
    "hidden": "H",
}


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())


def _coerce(value: str, default: Any):
    if value.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    if isinstance(default, float) or default is None:
        return float(value)
    return value


def build(cls, values: Mapping[str, str], aliases: Mapping[str, str] | None = None,
          prefix: str = "", base=None):
    """Instantiate dataclass ``cls`` from string values, ignoring unrelated keys."""
    aliases = aliases or {}
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for key, value in values.items():
        name = key[len(prefix):] if prefix and key.startswith(prefix) else key
        name = aliases.get(name, name)
        if name in defaults:
            try:
                kwargs[name] = _coerce(value, defaults[name])
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def float_list(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())


def int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def str_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())
