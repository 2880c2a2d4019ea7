import hashlib
import json
import logging
from typing import TypeVar

import pydantic
from pydantic import BaseModel, ConfigDict

from cdis_volume.errors import ConfigError, ConfigReadError, VolumeIOError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound="ConfigModel")


class ConfigModel(BaseModel):
    """Frozen, strict base for every JSON-backed configuration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    def digest(self) -> str:
        """Short SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_json_config(filepath, model: type[ModelT]) -> ModelT:
    """
    Loads a configuration model from a JSON file.

    Raises ConfigReadError when the file is missing or unreadable, and
    ConfigError when it is not valid JSON or fails the model's validators.
    Both name the file.
    """
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigReadError(f"Configuration file '{filepath}' not found.")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error decoding JSON from '{filepath}': {e}")
    except OSError as e:
        raise ConfigReadError(f"Could not read configuration file '{filepath}': {e}")

    if not isinstance(raw, dict):
        raise ConfigError(f"Configuration file '{filepath}' does not contain a JSON object.")
    try:
        config = model.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ConfigError(f"Invalid {model.__name__} in '{filepath}': {e}")
    logger.debug("Loaded %s from %s (digest %s)", model.__name__, filepath, config.digest())
    return config


def save_json_config(config: ConfigModel, filepath) -> None:
    try:
        with open(filepath, "w", encoding="utf-8") as f:
            f.write(config.to_json())
    except OSError as e:
        raise VolumeIOError(f"Could not write configuration file '{filepath}': {e}")
