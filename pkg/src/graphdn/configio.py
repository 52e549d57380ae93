"""Canonical key-value config text.

Format: bracketed section headers, one "key = value" per line. The canonical
serialization (fixed section and key order, no blank lines, '\n' endings) is
what checkpoints embed and digests hash, so serialize(parse(text)) of a
canonical text reproduces it byte for byte. Parsing is looser: blank lines
and '#' comments are skipped.
"""
from __future__ import annotations

from .errors import ConfigError

Sections = dict[str, dict[str, str]]


def serialize(sections: Sections) -> str:
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        for key, value in kv.items():
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse(text: str) -> Sections:
    sections: Sections = {}
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section header")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key before any [section] header")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        current[key] = value.strip()
    return sections


def fmt(value) -> str:
    """Value -> canonical text. floats use repr (round-trips exactly)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(fmt(v) for v in value)
    return str(value)


def parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected integer, got {text!r}") from None


def parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected float, got {text!r}") from None


def parse_int_tuple(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    return tuple(parse_int(part.strip()) for part in text.split(","))
