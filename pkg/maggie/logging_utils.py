"""
Logging setup for the command-line entry points.
Library modules only create module loggers; handlers are installed here.
"""

import logging
import sys

import coloredlogs
from pythonjsonlogger.json import JsonFormatter

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def setup_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """
    Configure the root logger once.

    Args:
        level: Logging level name
        json_logs: Emit one JSON object per record instead of coloured text
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    if json_logs:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(JsonFormatter(LOG_FORMAT))
        root.addHandler(handler)
        root.setLevel(level)
    else:
        coloredlogs.install(level=level, fmt=LOG_FORMAT, stream=sys.stderr)

    # PIL is chatty at DEBUG
    logging.getLogger("PIL").setLevel(logging.WARNING)
