"""
Structured JSON logging for the hypmax execution layer.

Call setup_logging() once per process (CLI entry point, pool worker, Modal
container). Modules log through logging.getLogger(__name__) and come out as
one JSON object per line on stderr.

Inside `with run_context(label=..., seed=...)` every line also carries those
fields, so interleaved suite logs can be split per experiment. Python
warnings (scipy's IntegrationWarning among them) are routed through the same
handler.
"""

import json
import logging
import os
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime, timezone

BASE_KEYS = ("ts", "level", "logger", "msg")

_run_fields: ContextVar[dict] = ContextVar("hypmax_run_fields", default={})


class RunContextFilter(logging.Filter):
    """Attach the active run_context() fields to each record."""

    def filter(self, record: logging.LogRecord) -> bool:
        fields = _run_fields.get()
        if fields:
            record.run = fields
        return True


class JSONFormatter(logging.Formatter):
    """Emit one JSON object per log line.

    Run fields and extra={"context": {...}} are merged in; neither may
    overwrite the base keys.
    """

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for extra in (getattr(record, "run", None), getattr(record, "context", None)):
            if isinstance(extra, dict):
                entry.update({k: v for k, v in extra.items() if k not in BASE_KEYS})
        if record.exc_info and record.exc_info[0]:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


@contextmanager
def run_context(**fields):
    """Tag log lines emitted inside the block with `fields` (nests, inner wins)."""
    token = _run_fields.set({**_run_fields.get(), **fields})
    try:
        yield
    finally:
        _run_fields.reset(token)


def setup_logging(level: str | None = None) -> None:
    """Configure the root logger with JSON output to stderr (LOG_LEVEL, default INFO)."""
    level = (level or os.environ.get("LOG_LEVEL", "INFO")).upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JSONFormatter())
    handler.addFilter(RunContextFilter())
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.INFO))
    logging.captureWarnings(True)
