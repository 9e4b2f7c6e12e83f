"""Configuration settings for TPL Monitor."""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

from ..core.errors import ArgumentError

# Load environment variables from .env file
load_dotenv()


def _parse_int(raw: Optional[str], default: int) -> Optional[int]:
    """Integer value of an environment variable; None when it does not parse."""
    if raw is None:
        return default
    try:
        return int(raw.strip())
    except ValueError:
        return None


class Settings:
    """Application settings loaded from environment variables."""

    def __init__(self):
        # Run configuration file used when --config is not given
        self.config_path: str = os.getenv("TPL_MONITOR_CONFIG", "config.yaml")
        self.output_dir: str = os.getenv("TPL_MONITOR_OUTPUT_DIR", "results")
        self.log_level: str = os.getenv("TPL_MONITOR_LOG_LEVEL", "INFO").upper()

        # Thread pool size for bootstrap iterations, sweep points and trials
        self.raw_workers: Optional[str] = os.getenv("TPL_MONITOR_WORKERS")
        self.workers: Optional[int] = _parse_int(self.raw_workers, 1)
        self.workers_from_env: bool = self.raw_workers is not None

    def validate(self) -> bool:
        """Validate that the environment holds usable values."""
        if self.workers is None:
            raise ArgumentError(f"TPL_MONITOR_WORKERS must be an integer, got {self.raw_workers!r}")
        if self.workers < 1:
            raise ArgumentError(f"TPL_MONITOR_WORKERS must be >= 1, got {self.workers}")
        if not isinstance(logging.getLevelName(self.log_level), int):
            raise ArgumentError(f"TPL_MONITOR_LOG_LEVEL is not a logging level: {self.log_level}")
        return True


# Global settings instance
settings = Settings()
