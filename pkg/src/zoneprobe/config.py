"""Loading, overriding and schema-validating the JSON experiment configs."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

SCHEMA_NAMES = ("model-config", "train-config", "generator-config", "probe")


class ConfigError(ValueError):
    """A config failed validation; the message names the offending field."""


@lru_cache(maxsize=None)
def _registry() -> Registry:
    pairs = []
    for name in SCHEMA_NAMES:
        text = resources.files("zoneprobe").joinpath("schemas", f"{name}.json").read_text(encoding="utf-8")
        pairs.append((f"{name}.json", Resource.from_contents(json.loads(text))))
    return Registry().with_resources(pairs)


def schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise KeyError(f"no schema named {name!r}")
    return _registry()[f"{name}.json"].contents


def validate(name: str, data, label: str | None = None) -> None:
    """Raise :class:`ConfigError` listing every violation as ``field: message``."""
    validator = Draft202012Validator(schema(name), registry=_registry())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        label = label or name
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{label}: {where}: {e.message}")
        raise ConfigError("\n".join(lines))


def load_json(path, name: str | None = None) -> dict:
    """Read a JSON file; validate against schema ``name`` when given."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: file not found")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if name is not None:
        validate(name, data, label=str(p))
    return data


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.field=value``; the value is read as JSON, else kept as a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(sections: dict[str, dict], overrides) -> None:
    """Set nested fields in place, e.g. ``train.lr=0.001`` or ``gen.question_types.who=2``."""
    for text in overrides or ():
        path, value = parse_override(text)
        if path[0] not in sections or len(path) < 2:
            raise ConfigError(f"override {text!r}: section must be one of {sorted(sections)}")
        node = sections[path[0]]
        for part in path[1:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not an object")
        node[path[-1]] = value
