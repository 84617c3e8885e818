"""Flat key=value config codec with typed, all-errors-at-once validation.

Used for operator config files, run-manifest echoes, and the config block
inside checkpoints. One ``key=value`` pair per line; blank lines and lines
starting with ``#`` are ignored. Booleans are ``true``/``false``; tuples are
comma-joined.
"""

from __future__ import annotations

import dataclasses
import typing


def encode_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(encode_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def encode_fields(obj, extra: dict | None = None) -> str:
    """Dataclass (or dict) to key=value text, keys sorted."""
    if dataclasses.is_dataclass(obj):
        data = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    else:
        data = dict(obj)
    if extra:
        data.update(extra)
    lines = [f"{k}={encode_value(v)}" for k, v in sorted(data.items())]
    return "\n".join(lines) + "\n"


def parse_kv_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def _convert(raw: str, ftype):
    origin = typing.get_origin(ftype)
    if ftype is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is str:
        return raw
    if ftype is tuple or origin is tuple:
        if raw == "":
            return ()
        args = typing.get_args(ftype)
        item_type = args[0] if args else int
        if item_type is Ellipsis or item_type is typing.Any:
            item_type = int
        return tuple(_convert(part.strip(), item_type) for part in raw.split(","))
    raise ValueError(f"unsupported field type {ftype}")


def coerce_dataclass(cls, kv: dict, ignore_extra: bool = False):
    """Build a dataclass from string values, reporting every bad field at once.

    Returns (instance, extras) where extras holds keys the dataclass does not
    define (only when ignore_extra is set; unknown keys are errors otherwise).
    """
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    errors = []
    values = {}
    extras = {}
    for key, raw in kv.items():
        if key not in names:
            if ignore_extra:
                extras[key] = raw
            else:
                errors.append(f"{key}: unknown key")
            continue
        try:
            values[key] = _convert(raw, hints[key])
        except (ValueError, TypeError) as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ValueError("invalid config: " + "; ".join(sorted(errors)))
    try:
        instance = cls(**values)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"invalid config: {exc}") from exc
    return instance, extras
