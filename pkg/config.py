#!/usr/bin/env python3
"""
Configuration module for the dldroid pipeline.

Reads optional environment overrides, validates numeric ranges and renders the
provenance header written at the top of every tabular output.
"""

import os
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence

__version__ = '1.0.0'
TOOL_NAME = 'dldroid'


class ConfigError(Exception):
    """Configuration validation error."""
    pass


class Config:
    """Environment-backed pipeline defaults."""

    # Optional environment variables with defaults
    OPTIONAL_VARS = {
        'DLDROID_SEED': '42',
        'DLDROID_FOLDS': '10',
        'DLDROID_THRESHOLD': '0.5',
        'DLDROID_JOBS': '1',
        'DLDROID_LOG_LEVEL': 'INFO',
    }

    LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

    def __init__(self):
        """Initialize configuration from environment variables."""
        self._config = {}
        self._validate_environment()

    def _validate_environment(self) -> None:
        """Load optional variables and validate them."""
        for var_name, default_value in self.OPTIONAL_VARS.items():
            self._config[var_name] = os.getenv(var_name, default_value)

        self._validate_numeric_settings()
        self._validate_log_level()

    def _validate_numeric_settings(self) -> None:
        """Validate numeric configuration values."""
        integer_vars = {
            'DLDROID_SEED': (0, 2 ** 31 - 1),
            'DLDROID_FOLDS': (2, 100),
            'DLDROID_JOBS': (1, 64),
        }

        for var_name, (min_val, max_val) in integer_vars.items():
            try:
                value = int(self._config[var_name])
            except ValueError:
                raise ConfigError(
                    f"{var_name} must be a valid integer, "
                    f"got: {self._config[var_name]}"
                )
            if not (min_val <= value <= max_val):
                raise ConfigError(
                    f"{var_name} must be between {min_val} and {max_val}, "
                    f"got: {value}"
                )
            self._config[var_name] = value

        try:
            threshold = float(self._config['DLDROID_THRESHOLD'])
        except ValueError:
            raise ConfigError(
                f"DLDROID_THRESHOLD must be a number, "
                f"got: {self._config['DLDROID_THRESHOLD']}"
            )
        if not (0.0 <= threshold <= 1.0):
            raise ConfigError(f"DLDROID_THRESHOLD must be between 0 and 1, got: {threshold}")
        self._config['DLDROID_THRESHOLD'] = threshold

    def _validate_log_level(self) -> None:
        level = str(self._config['DLDROID_LOG_LEVEL']).upper()
        if level not in self.LOG_LEVELS:
            raise ConfigError(
                f"DLDROID_LOG_LEVEL must be one of {', '.join(self.LOG_LEVELS)}, got: {level}"
            )
        self._config['DLDROID_LOG_LEVEL'] = level

    @property
    def seed(self) -> int:
        return self._config['DLDROID_SEED']

    @property
    def folds(self) -> int:
        return self._config['DLDROID_FOLDS']

    @property
    def threshold(self) -> float:
        return self._config['DLDROID_THRESHOLD']

    @property
    def jobs(self) -> int:
        return self._config['DLDROID_JOBS']

    @property
    def log_level(self) -> str:
        return self._config['DLDROID_LOG_LEVEL']

    def summary(self) -> Dict[str, str]:
        """Return configuration info for logging."""
        return {
            'seed': str(self.seed),
            'folds': str(self.folds),
            'threshold': str(self.threshold),
            'jobs': str(self.jobs),
        }


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one CLI invocation."""

    command: str
    argv: Sequence[str]
    seed: int = 42
    k: int = 10
    threshold: float = 0.5
    jobs: int = 1
    paths: Dict[str, str] = field(default_factory=dict)

    def header(self) -> str:
        """Provenance line recorded first in every primary output."""
        command_line = ' '.join(shlex.quote(arg) for arg in self.argv)
        return f"# {TOOL_NAME} {__version__} | command: {command_line} | seed: {self.seed}"


def load_key_value_file(path) -> Dict[str, str]:
    """
    Parse a ``key = value`` file.

    Blank lines and lines starting with ``#`` are ignored. Duplicate keys and
    lines without ``=`` are rejected.
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read parameter file {path}: {e}")
    except UnicodeDecodeError as e:
        raise ConfigError(f"Parameter file {path} is not valid UTF-8: {e}")

    values: Dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got: {line}")
        key, value = line.split('=', 1)
        key = key.strip()
        value = value.split(' #', 1)[0].strip()
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_bool(value: str) -> bool:
    """Interpret a key-value boolean."""
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"Expected a boolean, got: {value}")

