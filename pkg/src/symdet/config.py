"""Plain key = value text configs: one format for config files and checkpoints.

Values round-trip for the types the configs use: int, float, bool, str, and
comma-separated int tuples.  Every run is reproducible from its config text.
"""

from __future__ import annotations

import dataclasses
from typing import Any


class ConfigError(ValueError):
    pass


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, str)):
        return str(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    raise ConfigError(f"unsupported config value {v!r}")


def _parse_value(text: str, annotation: Any) -> Any:
    text = text.strip()
    origin = getattr(annotation, "__origin__", None)
    if annotation in (int, "int"):
        return int(text)
    if annotation in (float, "float"):
        return float(text)
    if annotation in (bool, "bool"):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if origin is tuple or annotation in ("tuple[int, ...]",):
        if not text:
            return ()
        return tuple(int(x) for x in text.split(","))
    if text == "none":
        return None
    return text


def dataclass_to_text(obj) -> str:
    lines = [f"{f.name} = {_format_value(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"


def dataclass_from_text(cls, text: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r} for {cls.__name__}")
        annotation = fields[key].type
        if val.strip() == "none":
            values[key] = None
        else:
            values[key] = _parse_value(val, _resolve_annotation(annotation))
    return cls(**values)


def _resolve_annotation(annotation):
    # dataclasses under `from __future__ import annotations` store strings
    if isinstance(annotation, str):
        mapping = {
            "int": int,
            "float": float,
            "bool": bool,
            "str": str,
            "tuple[int, ...]": "tuple[int, ...]",
            "int | None": int,
            "float | None": float,
            "str | None": str,
        }
        return mapping.get(annotation, str)
    return annotation


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """Parse KEY=VALUE override strings from the command line."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, _, val = pair.partition("=")
        out[key.strip()] = val.strip()
    return out
