"""
Experiment config files: load a JSON document, merge ``key=value`` overrides,
validate into ``ExperimentConfig``.

Override keys are dotted paths into the config (``alpha``,
``data.synthetic.n``, ``methods.0.params.epochs``). Only keys that already
exist are updated, except under a method's open ``params`` mapping.
"""
import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import ValidationError

from app.errors import ConfigError
from app.models.schemas import ExperimentConfig

log = logging.getLogger(__name__)


def _coerce(current: Any, value: Any) -> Any:
    """Match the type of the value being replaced where the override came in as text."""
    if isinstance(current, list):
        if isinstance(value, list):
            return value
        if isinstance(value, str):
            return [x.strip() for x in value.split(",") if x.strip()]
        return [value]
    if isinstance(current, bool):
        return value
    if isinstance(current, int) and isinstance(value, (float, str)):
        try:
            return int(value)
        except (TypeError, ValueError):
            return value
    if isinstance(current, float) and isinstance(value, str):
        try:
            return float(value)
        except (TypeError, ValueError):
            return value
    return value


def _set_path(data: dict, path: list[str], value: Any) -> bool:
    node: Any = data
    for part in path[:-1]:
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                return False
            node = node[int(part)]
        elif isinstance(node, dict) and isinstance(node.get(part), (dict, list)):
            node = node[part]
        else:
            return False
    last = path[-1]
    if isinstance(node, list):
        if not last.isdigit() or int(last) >= len(node):
            return False
        node[int(last)] = _coerce(node[int(last)], value)
        return True
    open_mapping = len(path) >= 2 and path[-2] == "params"
    if last not in node and not open_mapping:
        return False
    node[last] = _coerce(node[last], value) if last in node else value
    return True


def merge_overrides(current: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Apply dotted-path overrides; unknown keys are skipped with a warning."""
    if not overrides:
        return current
    data = current.model_dump(mode="json")
    for key, value in overrides.items():
        if value is None:
            continue
        if not _set_path(data, key.split("."), value):
            log.warning("Ignoring unknown config key %r", key)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid config after overrides: {exc}") from exc


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"Invalid experiment config: {exc}") from exc


def load_config(path: Union[str, Path], overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a JSON object")
    return merge_overrides(parse_config(raw), overrides or {})
