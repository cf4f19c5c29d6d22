"""
Logging setup shared by the command-line entry points.
"""
import logging
import sys

from app.core.exceptions import ConfigException

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """
    Configure the root logger with a single stderr stream handler.

    Args:
        level: Logging level name (DEBUG, INFO, WARNING, ...)

    Raises:
        ConfigException: If the level name is unknown
    """
    name = level.upper()
    if not isinstance(logging.getLevelName(name), int):
        raise ConfigException(f"Unknown log level: {level}")
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(name)
