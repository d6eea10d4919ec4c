# ticketlab/app/core/log.py
"""
Logging setup. Call configure_logging() once from an entry point; library
modules only do `logger = logging.getLogger(__name__)`.
"""

from __future__ import annotations

import logging
import sys
from typing import Optional

import orjson

from .config import settings

_HANDLER: Optional[logging.Handler] = None


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record; extra fields passed via `extra=` are kept."""

    _RESERVED = set(logging.LogRecord("", 0, "", 0, "", (), None).__dict__) | {"message", "asctime"}

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for k, v in record.__dict__.items():
            if k not in self._RESERVED:
                payload[k] = v
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return orjson.dumps(payload, default=str).decode()


def configure_logging(level: Optional[str] = None, json_lines: Optional[bool] = None) -> None:
    """Install (or replace) the single stderr handler owned by this module."""
    global _HANDLER
    lvl = (level or settings.LOG_LEVEL or "INFO").upper()
    use_json = settings.LOG_JSON if json_lines is None else json_lines

    handler = logging.StreamHandler(sys.stderr)
    if use_json:
        handler.setFormatter(JsonLineFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-7s %(name)s: %(message)s"))

    root = logging.getLogger()
    if _HANDLER is not None:
        root.removeHandler(_HANDLER)
    root.addHandler(handler)
    root.setLevel(lvl)
    _HANDLER = handler
