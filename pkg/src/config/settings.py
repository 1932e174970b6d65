"""Application configuration using pydantic-settings."""
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from ``TTSOPS_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="TTSOPS_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    log_level: str = Field(default="INFO")
    log_dir: Optional[Path] = Field(
        default=None,
        description="Directory for rotating log files; console only when unset"
    )

    output_dir: Optional[Path] = Field(
        default=None,
        description="Overrides the pipeline output directory"
    )
    max_workers: int = Field(
        default=4,
        ge=1,
        le=64,
        description="Thread pool size for concurrent variant loops"
    )
    default_seed: int = Field(default=0, ge=0, description="Seed for loop and retrain commands")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Ensure the log level is one logging understands."""
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level


# Global settings instance
settings = Settings()
