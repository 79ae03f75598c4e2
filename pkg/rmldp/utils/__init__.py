"""Utility modules for rmldp."""

from .logging import get_logger, run_context, setup_logging

__all__ = ["get_logger", "run_context", "setup_logging"]
