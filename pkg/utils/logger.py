# utils/logger.py
"""Logging setup for DavidSim."""

import logging
import os
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

# Shell logs go to stderr so CLI output and report files stay clean
shell_handler = RichHandler(console=Console(stderr=True), show_path=False)

local_dir = Path(__file__).parent.parent
file_handler = logging.FileHandler(Path(local_dir, "debug.log"), delay=True)

# Set the logging level
logger.setLevel(logging.DEBUG)
shell_handler.setLevel(os.environ.get("DAVID_LOG_LEVEL", "INFO").upper())
file_handler.setLevel(logging.DEBUG)

# Format for the logs
shell_format = "%(message)s"
file_format = (
    "%(levelname)s %(asctime)s [%(filename)s:%(funcName)s:%(lineno)d] %(message)s"
)

shell_formatter = logging.Formatter(shell_format)
file_formatter = logging.Formatter(file_format)

# Assign the formatters to the handlers
shell_handler.setFormatter(shell_formatter)
file_handler.setFormatter(file_formatter)

# Add the handlers to the logger
logger.addHandler(shell_handler)
logger.addHandler(file_handler)

logger.propagate = False


def set_shell_level(level: str):
    """Change the console verbosity (file logging stays at DEBUG)."""
    shell_handler.setLevel(level.upper())
