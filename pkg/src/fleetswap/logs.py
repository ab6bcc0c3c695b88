import logging
import sys
from pathlib import Path
from typing import TextIO

import structlog


def configure_logging(level: str = "info", json_logs: bool = False) -> None:
    renderer = (
        structlog.processors.JSONRenderer()
        if json_logs
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, level.upper(), logging.INFO)
        ),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )


class AuditLog:
    """Append-only JSON-lines audit trail, one object per event.

    Every line carries ts, assignment_id, iteration, event, signature and
    client_id; absent values are written as null so readers can rely on keys.
    """

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        self._file: TextIO = path.open("a", encoding="utf-8")
        self._logger = structlog.wrap_logger(
            structlog.WriteLogger(self._file),
            processors=[
                structlog.processors.TimeStamper(fmt="iso", key="ts"),
                structlog.processors.JSONRenderer(),
            ],
            wrapper_class=structlog.BoundLogger,
        )

    def record(
        self,
        event: str,
        *,
        assignment_id: str,
        iteration: int | None = None,
        signature: str | None = None,
        client_id: str | None = None,
        **extra,
    ) -> None:
        self._logger.info(
            event,
            assignment_id=assignment_id,
            iteration=iteration,
            signature=signature,
            client_id=client_id,
            **extra,
        )

    def close(self) -> None:
        self._file.close()
