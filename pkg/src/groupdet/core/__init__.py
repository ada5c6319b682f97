"""
Core module - Configuration, logging, domain types and errors.
"""

from groupdet.core.config import (
    DetectorConfig,
    RunConfig,
    get_logger,
    load_run_config,
    settings,
    setup_logging,
)
from groupdet.core.errors import (
    ConfigError,
    DataError,
    DivergenceDetected,
    GroupDetError,
    ModelError,
)

__all__ = [
    "DetectorConfig",
    "RunConfig",
    "get_logger",
    "load_run_config",
    "settings",
    "setup_logging",
    "ConfigError",
    "DataError",
    "DivergenceDetected",
    "GroupDetError",
    "ModelError",
]
