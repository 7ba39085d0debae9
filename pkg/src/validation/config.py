"""Load YAML run configuration into ``RunConfig``.

Documents live under config/ (default.yaml, smoke.yaml). Flag overrides
from the CLI are applied as dotted paths, e.g. ``{"tune.steps": 50}``.
"""

from __future__ import annotations

import logging
from pathlib import Path

import yaml
from pydantic import ValidationError

from src.errors import ConfigError
from src.validation.schemas import RunConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent.parent / "config"
DEFAULT_CONFIG = CONFIG_DIR / "default.yaml"


def _read_yaml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _set_dotted(data: dict, dotted: str, value) -> None:
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {key!r} is not a section")
    node[leaf] = value


def load_config(path: Path | str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse ``path`` (default config/default.yaml), apply overrides, validate.

    None-valued overrides are skipped so unset CLI flags pass straight through.
    """
    path = Path(path) if path else DEFAULT_CONFIG
    data = _read_yaml(path)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.debug("Loaded config %s (digest %s)", path, config.digest()[:12])
    return config
