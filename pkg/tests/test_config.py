#!/usr/bin/env python3
"""
Tests for configuration module.

Tests environment overrides, range validation, provenance headers and the
key-value parameter file format.
"""

import os
import pytest
from unittest.mock import patch

from config import (Config, ConfigError, RunConfig,
                    load_key_value_file, parse_bool, __version__)


class TestConfig:
    """Test environment-backed configuration."""

    def test_defaults_without_environment(self):
        """Test that every setting has a default."""
        with patch.dict(os.environ, {}, clear=True):
            config = Config()

        assert config.seed == 42
        assert config.folds == 10
        assert config.threshold == 0.5
        assert config.jobs == 1
        assert config.log_level == 'INFO'

    def test_environment_overrides(self):
        """Test that environment variables replace defaults."""
        env_vars = {
            'DLDROID_SEED': '7',
            'DLDROID_FOLDS': '5',
            'DLDROID_THRESHOLD': '0.7',
            'DLDROID_JOBS': '4',
            'DLDROID_LOG_LEVEL': 'debug',
        }
        with patch.dict(os.environ, env_vars, clear=True):
            config = Config()

        assert config.seed == 7
        assert config.folds == 5
        assert config.threshold == 0.7
        assert config.jobs == 4
        assert config.log_level == 'DEBUG'

    def test_invalid_integer(self):
        """Test error with a non-numeric fold count."""
        with patch.dict(os.environ, {'DLDROID_FOLDS': 'ten'}, clear=True):
            with pytest.raises(ConfigError) as exc_info:
                Config()

        assert "must be a valid integer" in str(exc_info.value)

    @pytest.mark.parametrize('var_name,value', [
        ('DLDROID_FOLDS', '1'),
        ('DLDROID_FOLDS', '101'),
        ('DLDROID_JOBS', '0'),
        ('DLDROID_SEED', '-1'),
    ])
    def test_integer_out_of_range(self, var_name, value):
        """Test error with numeric values outside their range."""
        with patch.dict(os.environ, {var_name: value}, clear=True):
            with pytest.raises(ConfigError) as exc_info:
                Config()

        assert "must be between" in str(exc_info.value)

    def test_threshold_out_of_range(self):
        """Test error with a threshold above 1."""
        with patch.dict(os.environ, {'DLDROID_THRESHOLD': '1.5'}, clear=True):
            with pytest.raises(ConfigError):
                Config()

    def test_unknown_log_level(self):
        """Test error with an unsupported log level."""
        with patch.dict(os.environ, {'DLDROID_LOG_LEVEL': 'VERBOSE'}, clear=True):
            with pytest.raises(ConfigError) as exc_info:
                Config()

        assert "DLDROID_LOG_LEVEL" in str(exc_info.value)

    def test_summary(self):
        """Test configuration summary for logging."""
        with patch.dict(os.environ, {}, clear=True):
            summary = Config().summary()

        assert summary == {'seed': '42', 'folds': '10', 'threshold': '0.5', 'jobs': '1'}


class TestRunConfig:
    """Test provenance header rendering."""

    def test_header_records_version_command_and_seed(self):
        run = RunConfig(command='rank', argv=['dldroid', 'rank', 'data.csv', '--top', '20'], seed=3)

        assert run.header() == f"# dldroid {__version__} | command: dldroid rank data.csv --top 20 | seed: 3"

    def test_header_quotes_arguments_with_spaces(self):
        run = RunConfig(command='rank', argv=['dldroid', 'rank', 'my data.csv'])

        assert "'my data.csv'" in run.header()

    def test_header_has_no_timestamp(self):
        """Test that identical runs produce identical headers."""
        first = RunConfig(command='eval', argv=['dldroid', 'eval', 'a.csv'], seed=42)
        second = RunConfig(command='eval', argv=['dldroid', 'eval', 'a.csv'], seed=42)

        assert first.header() == second.header()
        assert first.header().startswith('# ')


class TestKeyValueFile:
    """Test the key-value parameter file format."""

    def test_parses_keys_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / 'params.conf'
        path.write_text(
            "# corpus\n"
            "n_malware = 10\n"
            "\n"
            "r_stateful=0.9   # inline comment\n"
            "p.malware.TelephonyManager;->getDeviceId = 0.4\n"
            "event_budget =\n",
            encoding='utf-8'
        )

        values = load_key_value_file(path)

        assert values == {
            'n_malware': '10',
            'r_stateful': '0.9',
            'p.malware.TelephonyManager;->getDeviceId': '0.4',
            'event_budget': '',
        }

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / 'params.conf'
        path.write_text("seed = 1\nseed = 2\n", encoding='utf-8')

        with pytest.raises(ConfigError) as exc_info:
            load_key_value_file(path)

        assert "duplicate key 'seed'" in str(exc_info.value)

    def test_line_without_equals_rejected(self, tmp_path):
        path = tmp_path / 'params.conf'
        path.write_text("seed 1\n", encoding='utf-8')

        with pytest.raises(ConfigError):
            load_key_value_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_key_value_file(tmp_path / 'absent.conf')


class TestParseBool:

    @pytest.mark.parametrize('value,expected', [
        ('true', True), ('YES', True), ('1', True), ('on', True),
        ('false', False), ('No', False), ('0', False), (' off ', False),
    ])
    def test_accepted_spellings(self, value, expected):
        assert parse_bool(value) is expected

    def test_rejects_other_text(self):
        with pytest.raises(ConfigError):
            parse_bool('maybe')
