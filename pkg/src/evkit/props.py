"""Human-readable key-value properties files.

One ``key: value`` pair per line, ``#`` starts a comment, keys are dotted
paths (``sensor.width``). Values round-trip as int, float, bool or str.
Files are written with sorted keys so identical mappings produce
byte-identical files. Used for container sidecar metadata, sensor and
school configuration, and evaluation reports.
"""

from __future__ import annotations

import os
from typing import Any, Mapping

__all__ = ["format_props", "parse_props", "write_props", "read_props", "flatten", "unflatten"]


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # shortest exact round-trip
    return str(v)


def _parse_value(s: str) -> Any:
    if s == "true":
        return True
    if s == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def flatten(mapping: Mapping[str, Any], prefix: str = "") -> dict:
    """Flatten nested mappings into dotted keys."""
    out: dict = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, prefix=key + "."))
        else:
            out[key] = v
    return out


def unflatten(props: Mapping[str, Any]) -> dict:
    """Inverse of :func:`flatten`."""
    out: dict = {}
    for key, v in props.items():
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = v
    return out


def format_props(props: Mapping[str, Any]) -> str:
    flat = flatten(props)
    lines = [f"{k}: {_format_value(flat[k])}" for k in sorted(flat)]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_props(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, _, val = line.partition(":")
        out[key.strip()] = _parse_value(val.strip())
    return out


def write_props(path, props: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_props(props))


def read_props(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_props(fh.read())
