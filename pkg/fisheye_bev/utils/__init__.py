"""
Utility modules for the fisheye BEV engine.

Available utilities:
- logger: Logging configuration and utilities
- errors: Exception hierarchy and exit-code mapping
- config: Environment-driven settings (import fisheye_bev.utils.config)
"""

from .logger import setup_logger
from .errors import (
    ValidationError,
    ConfigError,
    ShapeError,
    DomainError,
    OutOfImageError,
    OutOfFovError,
    DataError,
    GenerationError,
    NumericError,
    TrainingError,
    UsageError,
    exit_code_for,
)

__all__ = [
    'setup_logger',
    'ValidationError',
    'ConfigError',
    'ShapeError',
    'DomainError',
    'OutOfImageError',
    'OutOfFovError',
    'DataError',
    'GenerationError',
    'NumericError',
    'TrainingError',
    'UsageError',
    'exit_code_for',
]
