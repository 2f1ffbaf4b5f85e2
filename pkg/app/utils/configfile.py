"""Plain-text ``key=value`` experiment configs.

Files use dotenv syntax: ``#`` comments, optional quoting, one key per line.
Keys prefixed with ``scenario.`` configure the scenario generator, the rest
configure the sweep. Comma separated values are lists.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Type, TypeVar, Union

from dotenv.parser import parse_stream
from pydantic import BaseModel, ValidationError

from app.errors import ConfigError

SCENARIO_PREFIX = "scenario."

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


@dataclass(frozen=True)
class ConfigEntries:
    source: str
    values: Dict[str, str] = field(default_factory=dict)
    lines: Dict[str, int] = field(default_factory=dict)

    def section(self, prefix: str) -> "ConfigEntries":
        values = {key[len(prefix) :]: value for key, value in self.values.items() if key.startswith(prefix)}
        lines = {key[len(prefix) :]: line for key, line in self.lines.items() if key.startswith(prefix)}
        return ConfigEntries(self.source, values, lines)

    def without(self, prefix: str) -> "ConfigEntries":
        values = {key: value for key, value in self.values.items() if not key.startswith(prefix)}
        lines = {key: line for key, line in self.lines.items() if not key.startswith(prefix)}
        return ConfigEntries(self.source, values, lines)

    def line_of(self, key: str) -> Optional[int]:
        return self.lines.get(key)


def split_list(value: object) -> List[str]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(item).strip() for item in value if str(item).strip()]
    return [chunk.strip() for chunk in str(value).split(",") if chunk.strip()]


def parse_entries(text: str, source: str = "<config>") -> ConfigEntries:
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    diagnostics: List[Tuple[Optional[int], str]] = []

    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            diagnostics.append((line, f"cannot parse {binding.original.string.strip()!r}"))
            continue
        if binding.key is None:
            continue
        key = binding.key.strip().lower()
        if binding.value is None:
            diagnostics.append((line, f"key {key!r} has no value"))
            continue
        if key in values:
            diagnostics.append((line, f"duplicate key {key!r} (first set on line {lines[key]})"))
            continue
        values[key] = binding.value.strip()
        lines[key] = line

    if diagnostics:
        raise ConfigError(source, diagnostics)
    return ConfigEntries(source, values, lines)


def load_entries(path: Union[str, Path]) -> ConfigEntries:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), [(None, f"cannot read config: {exc}")]) from exc
    logger.debug("Loaded config %s", path)
    return parse_entries(text, source=str(path))


def validate_entries(
    model_cls: Type[ModelT], entries: ConfigEntries, prefix: str = "", extra: Optional[Dict[str, object]] = None
) -> ModelT:
    """Build ``model_cls`` from ``entries`` (plus already-parsed ``extra`` fields) and map schema errors back to lines."""
    try:
        return model_cls.parse_obj({**entries.values, **(extra or {})})
    except ValidationError as exc:
        diagnostics: List[Tuple[Optional[int], str]] = []
        for error in exc.errors():
            key = str(error["loc"][0]) if error["loc"] else ""
            diagnostics.append((entries.line_of(key), f"{prefix}{key}: {error['msg']}"))
        raise ConfigError(entries.source, diagnostics) from exc
