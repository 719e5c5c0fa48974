from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml
from pydantic import ValidationError
from pydantic_settings import BaseSettings

from mathstruct.errors import ArtifactIOError, ConfigError
from mathstruct.nn.config import ModelConfig
from mathstruct.train.config import TrainConfig


class Settings(BaseSettings):
    # Application Settings
    APP_NAME: str = "mathstruct"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Execution defaults (CLI flags override)
    THREADS: int = 1
    SEED: int = 0

    class Config:
        env_file = ".env"


settings = Settings()

MODEL_KEYS = frozenset(ModelConfig.model_fields)
TRAIN_KEYS = frozenset(TrainConfig.model_fields)


def _parse_key_values(text: str, path: str) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{number}: expected `key = value`")
        try:
            values[key.strip()] = yaml.safe_load(value.strip()) if value.strip() else None
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}:{number}: bad value {value.strip()!r}") from e
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Flat config: `key = value` lines, or a YAML mapping for .yaml/.yml files.
    Keys must be ModelConfig or TrainConfig fields.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(str(path), e.strerror or str(e)) from e
    if path.suffix in (".yaml", ".yml"):
        try:
            values = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
        if not isinstance(values, dict) or any(isinstance(v, (dict, list)) for v in values.values()):
            raise ConfigError(f"{path}: expected a flat mapping")
    else:
        values = _parse_key_values(text, str(path))
    unknown = sorted(set(values) - MODEL_KEYS - TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return values


def build_configs(file_values: Mapping[str, Any], overrides: Mapping[str, Any],
                  vocab_size: Optional[int] = None) -> Tuple[ModelConfig, TrainConfig]:
    """defaults < config file < flags (None flags are unset)."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if vocab_size is not None:
        merged["vocab_size"] = vocab_size
    try:
        mcfg = ModelConfig(**{k: v for k, v in merged.items() if k in MODEL_KEYS})
        tcfg = TrainConfig(**{k: v for k, v in merged.items() if k in TRAIN_KEYS})
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{where}: {first['msg']}") from e
    return mcfg, tcfg


def build_train_config(file_values: Mapping[str, Any], overrides: Mapping[str, Any]) -> TrainConfig:
    merged = {k: v for k, v in dict(file_values).items() if k in TRAIN_KEYS}
    merged.update({k: v for k, v in overrides.items() if v is not None and k in TRAIN_KEYS})
    try:
        return TrainConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"{'.'.join(str(p) for p in first['loc'])}: {first['msg']}") from e
