"""Structured logging for the solvers, estimators and pipelines."""

import logging
import sys
from contextlib import AbstractContextManager
from typing import Any, List, Optional

import numpy as np
import structlog
from structlog.typing import EventDict, Processor, WrappedLogger


def _plain_numbers(logger: WrappedLogger, method_name: str, event_dict: EventDict) -> EventDict:
    """numpy scalars become Python numbers, complex values become strings."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            value = value.item()
        if isinstance(value, complex):
            value = f"{value.real:.12g}{value.imag:+.12g}j"
        event_dict[key] = value
    return event_dict


def _processors(json_logs: bool) -> List[Processor]:
    renderer: Processor = structlog.processors.JSONRenderer() if json_logs else structlog.dev.ConsoleRenderer()
    return [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.format_exc_info,
        _plain_numbers,
        renderer,
    ]


def setup_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """Route structlog through stdlib logging on stderr at ``level``."""
    structlog.configure(
        processors=_processors(json_logs),
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
    # stdout carries the rich tables
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level.upper(), force=True)


def run_context(**values: Any) -> AbstractContextManager:
    """Bind run-wide keys (experiment name, seed) to every event inside the block."""
    return structlog.contextvars.bound_contextvars(**values)


def get_logger(name: Optional[str] = None) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)
