import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Any, Optional

import numpy as np
import structlog

APP_NAME = "mathstruct"


def _jsonable(value: Any) -> Any:
    # numpy scalars and small arrays show up in training and evaluation events
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _stamp_app(_, __, event_dict):
    event_dict.setdefault("app", APP_NAME)
    return event_dict


def configure_logging(log_level: str = "INFO", log_file: Optional[str] = None):
    """
    One JSON object per event on stderr, plus a rotating file when `log_file` is set.

    stdout is left to the command-line results.
    """
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        try:
            handlers.append(RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5))
        except OSError:
            pass  # stderr only

    logging.basicConfig(format="%(message)s", level=log_level.upper(), handlers=handlers, force=True)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            _stamp_app,
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(default=_jsonable),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    return structlog.get_logger()


logger = configure_logging()
