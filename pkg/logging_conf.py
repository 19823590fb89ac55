#!/usr/bin/env python3
"""
Logging configuration for the dldroid pipeline.

Keeps analyst directory layouts and raw manifest bytes out of the logs while
providing structured operation/fold/grid messages.
"""

import logging
import re
import sys
from pathlib import Path
from typing import Any, Optional

ROOT_LOGGER = 'dldroid'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%dT%H:%M:%S'


class PipelineFormatter(logging.Formatter):
    """Formatter that shortens absolute sample paths to their file names."""

    # Absolute paths of samples, logs, CSVs and models
    PATH_PATTERN = re.compile(
        r'(?:/[^/\s:]+)+/([^/\s:]+\.(?:apk|xml|log|txt|csv|tsv|json|jsonl|conf))\b',
        re.IGNORECASE,
    )

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        return self.PATH_PATTERN.sub(r'.../\1', message)


class SampleDigestFilter(logging.Filter):
    """Block records that would dump raw binary manifest or archive bytes."""

    BLOCKED_PATTERNS = [
        # bytes repr of an AXML document header
        re.compile(r"b'\\x03\\x00\\x08\\x00"),
        # bytes repr of a ZIP local header
        re.compile(r"b'PK\\x03\\x04"),
    ]

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        for pattern in self.BLOCKED_PATTERNS:
            if pattern.search(message):
                return False
        return True


def _attach(logger: logging.Logger, handler: logging.Handler, level: str) -> None:
    handler.setLevel(getattr(logging, level.upper()))
    handler.setFormatter(PipelineFormatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
    handler.addFilter(SampleDigestFilter())
    logger.addHandler(handler)


def setup_logging(
    level: str = 'INFO',
    log_file: Optional[str] = None,
    enable_console: bool = True
) -> logging.Logger:
    """
    Setup pipeline logging.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR)
        log_file: Optional log file path
        enable_console: Whether to log to stderr

    Returns:
        Configured root pipeline logger
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(getattr(logging, level.upper()))
    logger.handlers.clear()
    logger.propagate = False

    if enable_console:
        # stdout carries primary outputs
        _attach(logger, logging.StreamHandler(sys.stderr), level)

    if log_file:
        try:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            _attach(logger, logging.FileHandler(log_file, encoding='utf-8'), 'DEBUG')
        except OSError as e:
            logger.warning(f"Cannot write log file {log_file}: {e}")

    if not logger.handlers:
        logger.addHandler(logging.NullHandler())

    return logger


def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    """Get a pipeline logger instance."""
    return logging.getLogger(name)


def log_operation_start(operation: str, **kwargs: Any) -> None:
    """Log the start of an operation with its parameters."""
    logger = get_logger()
    param_str = ', '.join(f"{k}={v}" for k, v in kwargs.items())
    logger.info(f"Starting {operation}" + (f" with {param_str}" if param_str else ""))


def log_operation_result(operation: str, success: bool, count: Optional[int] = None,
                         error: Optional[str] = None) -> None:
    """Log the result of an operation."""
    logger = get_logger()

    if success:
        count_str = f" ({count} items)" if count is not None else ""
        logger.info(f"Completed {operation} successfully{count_str}")
    else:
        logger.error(f"{operation} failed: {error or 'unknown error'}")


def log_fold_result(fold: int, counts: Any) -> None:
    """Log one cross-validation fold's confusion counts."""
    get_logger(f'{ROOT_LOGGER}.evalcore').debug(
        f"Fold {fold}: tp={counts.tp} tn={counts.tn} fp={counts.fp} fn={counts.fn}"
    )


def log_grid_row(layers: Any, weighted_fm: float, seconds: float) -> None:
    """Log one evaluated grid configuration."""
    layer_str = ','.join(str(width) for width in layers)
    get_logger(f'{ROOT_LOGGER}.learners').info(
        f"Grid config [{layer_str}] w-FM={weighted_fm:.4f} in {seconds:.1f}s"
    )
