"""Logging functionality."""

from __future__ import annotations

import json
import logging
from datetime import datetime
from pathlib import Path

from rich.logging import RichHandler

from mirrorcert.ui import console

# Run-log fields, in output order
FIELD_ORDER = ["timestamp", "event", "kind", "status", "exit_code", "elapsed", "message", "artifacts"]


def setup_logging(level: str = "WARNING") -> None:
    """Route the mirrorcert loggers through rich on the shared console.

    Args:
        level: Logging level name (DEBUG, INFO, WARNING, ...).
    """
    logger = logging.getLogger("mirrorcert")
    logger.setLevel(level.upper())
    logger.handlers.clear()
    handler = RichHandler(console=console, show_path=False, markup=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.propagate = False


def append_log(log_file: Path, entry: dict) -> None:
    """Append log entry to JSONL file."""
    # Output only known fields in the specified order
    log_entry = {"timestamp": datetime.now().isoformat()}
    for field in FIELD_ORDER[1:]:  # Exclude timestamp
        if field in entry and entry[field] is not None:
            log_entry[field] = entry[field]
    log_file.parent.mkdir(parents=True, exist_ok=True)
    with log_file.open("a", encoding="utf-8") as f:
        f.write(json.dumps(log_entry, ensure_ascii=False) + "\n")
