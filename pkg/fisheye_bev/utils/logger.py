"""
Logging utilities for the fisheye BEV engine.

Provides consistent logging configuration across services and commands.
Console output goes to stderr so that command stdout stays machine-readable.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _default_level() -> int:
    # Read directly from the environment: config.py itself logs through this module.
    name = os.getenv('FBEV_LOG_LEVEL', 'INFO').upper()
    return getattr(logging, name, logging.INFO)


def setup_logger(
    name: str,
    log_file: Optional[str] = None,
    level: Optional[Union[int, str]] = None,
) -> logging.Logger:
    """
    Configure logger with consistent formatting and handling.

    Args:
        name: Logger name (typically __name__)
        log_file: Optional log file name (stored in logs/ directory)
        level: Logging level (default: FBEV_LOG_LEVEL, falling back to INFO)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    if level is None:
        level = _default_level()
    logger.setLevel(level)

    # Avoid adding handlers multiple times
    if logger.handlers:
        return logger

    formatter = logging.Formatter(LOG_FORMAT)

    # Diagnostics stream
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path("logs") / log_file
        log_path.parent.mkdir(exist_ok=True)
        file_handler = RotatingFileHandler(
            log_path,
            maxBytes=10485760,  # 10MB
            backupCount=5
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # Records are handled here; don't duplicate them through the root logger.
    logger.propagate = False
    return logger


def set_level(level: Union[int, str]) -> None:
    """Re-level every logger created through setup_logger (used by --verbose/--quiet)."""
    for logger_name, logger in logging.Logger.manager.loggerDict.items():
        if isinstance(logger, logging.Logger) and logger_name.startswith('fisheye_bev'):
            logger.setLevel(level)
