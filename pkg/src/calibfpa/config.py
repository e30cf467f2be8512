"""``key = value`` run configuration files.

One assignment per line; ``#`` starts a comment. Values are stored as text
and converted by the consumer. ``none`` denotes an unset optional value.
"""

from __future__ import annotations

import math
from typing import Dict, Mapping


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> Dict[str, str]:
    with open(path) as f:
        return parse_config(f.read())


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        # repr round-trips exactly; inf/nan spelled the way float() reads them
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (tuple, list)):
        return "x".join(str(x) for x in v)
    return str(v)


def format_config(values: Mapping[str, object], header: str = "") -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {format_value(v)}" for k, v in sorted(values.items())]
    return "\n".join(lines) + "\n"


def write_config(path, values: Mapping[str, object], header: str = ""):
    with open(path, "w") as f:
        f.write(format_config(values, header))


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")
