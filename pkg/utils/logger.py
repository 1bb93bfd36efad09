"""Logging utilities for training, evaluation and the command line."""

import csv
import json
import logging
import os
import sys
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv
from tqdm import tqdm

load_dotenv()


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for different log levels."""

    COLORS = {
        'DEBUG': '\033[36m',      # Cyan
        'INFO': '\033[32m',       # Green
        'WARNING': '\033[33m',    # Yellow
        'ERROR': '\033[31m',      # Red
        'CRITICAL': '\033[35m',   # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        # Copy so other handlers see the plain level name
        record = logging.makeLogRecord(record.__dict__)
        log_color = self.COLORS.get(record.levelname, self.RESET)
        record.levelname = f"{log_color}{record.levelname}{self.RESET}"
        return super().format(record)


def default_level() -> int:
    """Resolve the log level from LOG_LEVEL, defaulting to INFO."""
    name = os.getenv("LOG_LEVEL", "INFO").upper()
    return getattr(logging, name, logging.INFO)


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """Set up a logger with colored output."""
    level = default_level() if level is None else level
    logger = logging.getLogger(name)
    logger.setLevel(level)

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(level)

        formatter = ColoredFormatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False

    return logger


def log_component_call(logger: logging.Logger, component: str, action: str,
                       details: Optional[Dict[str, Any]] = None):
    """Log a component event with structured information."""
    message = f"[{component}] {action}"
    if details:
        message += f" | Details: {json.dumps(details, sort_keys=True, default=str)}"
    logger.info(message)


class LossLog:
    """Appends (step, task, loss) rows to a CSV file every `every` steps.

    With `resume` an existing file keeps its rows and new rows follow them;
    `offset` is added to every recorded step.
    """

    HEADER = ("step", "task", "loss")

    def __init__(self, path: Optional[str], every: int = 50, resume: bool = False, offset: int = 0):
        self.path = path
        self.every = max(int(every), 1)
        self.offset = int(offset)
        self.rows = []
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            if resume and os.path.exists(path) and os.path.getsize(path) > 0:
                return
            with open(path, "w", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow(self.HEADER)

    def due(self, step: int) -> bool:
        return step % self.every == 0

    def record(self, step: int, losses: Dict[str, float]) -> None:
        rows = [(step + self.offset, task, f"{value:.6f}") for task, value in sorted(losses.items())]
        self.rows.extend(rows)
        if self.path:
            with open(self.path, "a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerows(rows)


def progress(iterable: Iterable, enabled: bool = True, desc: str = "", total: Optional[int] = None):
    """Wrap an iterable in a tqdm bar unless progress output is disabled."""
    if not enabled:
        return iterable
    return tqdm(iterable, desc=desc, total=total, leave=False, dynamic_ncols=True)
