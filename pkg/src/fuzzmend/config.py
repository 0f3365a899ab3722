"""Layered settings: built-in defaults < config file < command-line flags.

The config file is a flat document of ``key = value`` lines with dotted
section prefixes (``toolchain.*``, ``model.*``, ``repair.*``,
``generator.*``), ``#`` comments allowed.
"""

from __future__ import annotations

import re
from pathlib import Path

_SIZE_RE = re.compile(r"^(?P<num>\d+(?:\.\d+)?)\s*(?P<unit>[kKmMgGtT]?)(?:i?[bB])?$")
_SIZE_MULT = {"": 1, "k": 1024, "m": 1024**2, "g": 1024**3, "t": 1024**4}


class ConfigError(Exception):
    """Bad configuration input (file syntax, unparsable value)."""


def parse_size(text: str | int) -> int:
    """Parse sizes like ``16G``, ``64M``, ``1024`` into bytes."""
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"cannot parse size {text!r}")
    return int(float(m.group("num")) * _SIZE_MULT[m.group("unit").lower()])


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


class Settings:
    """Resolves one effective value per key, tracking what was used."""

    def __init__(self, file_values: dict[str, str] | None = None):
        self._file = file_values or {}
        self.effective: dict[str, str] = {}

    def get(self, key: str, flag_value, default, cast=str):
        """Flag (when given) beats file beats default; records the result."""
        if flag_value is not None:
            value = flag_value
        elif key in self._file:
            try:
                value = cast(self._file[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        else:
            value = default
        self.effective[key] = str(value)
        return value

    def dump(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in sorted(self.effective.items()))
