import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

ENV_OUTPUT_DIR = "POISONLAB_OUTPUT_DIR"
ENV_THREADS = "POISONLAB_THREADS"
ENV_LOG_LEVEL = "POISONLAB_LOG_LEVEL"


@dataclass(frozen=True)
class Settings:
    """Runtime settings read from the environment."""

    output_dir: Optional[str]
    threads: int
    log_level: str


class SettingsManager:
    """Lazily reads the environment once and hands out the same Settings."""

    _instance: Optional['SettingsManager'] = None
    _settings: Optional[Settings] = None

    def __new__(cls) -> 'SettingsManager':
        """Singleton pattern to ensure only one settings instance."""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def _read(self) -> Settings:
        threads_raw = os.getenv(ENV_THREADS, "1")
        try:
            threads = int(threads_raw)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} must be a positive integer, got {threads_raw!r}") from None
        if threads < 1:
            raise ValueError(f"{ENV_THREADS} must be a positive integer, got {threads_raw!r}")

        level = os.getenv(ENV_LOG_LEVEL, "INFO").upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"{ENV_LOG_LEVEL} is not a logging level: {level!r}")

        return Settings(output_dir=os.getenv(ENV_OUTPUT_DIR) or None, threads=threads, log_level=level)

    @property
    def settings(self) -> Settings:
        if self._settings is None:
            self._settings = self._read()
        return self._settings

    def reset(self) -> None:
        """Forget cached settings so the next access re-reads the environment."""
        self._settings = None


_settings_manager = SettingsManager()


def get_settings() -> Settings:
    """
    Get the runtime settings.

    Returns:
        Settings: Output directory override, default thread count and log level

    Raises:
        ValueError: If an environment variable holds an invalid value

    Example:
        >>> from utils.config import get_settings
        >>> get_settings().threads
        1
    """
    return _settings_manager.settings


def reset_settings() -> None:
    _settings_manager.reset()


def resolve_output_dir(explicit: Optional[str], default: str) -> str:
    """An explicit ``--out`` wins, then POISONLAB_OUTPUT_DIR, then ``default``."""
    if explicit:
        return explicit
    return get_settings().output_dir or default


def load_config_file(path: str) -> dict:
    """Read a TOML or JSON configuration file into a plain mapping."""
    if not os.path.exists(path):
        raise ValueError(f"config file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".toml":
        with open(path, "rb") as f:
            return tomllib.load(f)
    if ext == ".json":
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    raise ValueError(f"unsupported config format {ext!r}; use .toml or .json")
