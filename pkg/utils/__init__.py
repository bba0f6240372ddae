# utils/__init__.py
"""Utilities for DavidSim."""

from .logger import logger

__all__ = ["logger"]
