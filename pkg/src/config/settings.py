import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..exceptions.simulation_exceptions import ConfigSchemaException

load_dotenv(".env")


class OutputSettings(BaseSettings):
    output_dir: Optional[str] = None

    model_config = SettingsConfigDict(env_prefix="QWALK_", extra="ignore")


class RuntimeSettings(BaseSettings):
    log_level: str = "INFO"
    # thread pool size for ensemble realizations and tomography restarts
    max_workers: int = Field(default=1, ge=1)

    model_config = SettingsConfigDict(env_prefix="QWALK_", extra="ignore")

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"unknown log level {value!r}")
        return level


class AppConfig:
    def __init__(self):
        self.output = OutputSettings()
        self.runtime = RuntimeSettings()


def get_config() -> AppConfig:
    """Process settings from the environment (and .env); a bad value is a schema error."""
    try:
        return AppConfig()
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        raise ConfigSchemaException(f"Invalid QWALK_ settings: {details}", failed_step="settings")
