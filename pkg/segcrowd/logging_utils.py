"""
SegCrowd - Structured Logging Infrastructure

All logs are:
- Structured (JSON lines when a log directory is given)
- Timestamped
- Module-scoped
- Echoed to stderr so stdout stays reserved for command output

Every stateful component logs:
- Initialization parameters
- Inputs received / outputs produced (DEBUG)
- Explicit error states with reason and suggested fix
"""

import json
import sys
from collections import Counter
from datetime import datetime
from enum import Enum
from itertools import chain
from pathlib import Path
from typing import Any, Optional, TextIO

import numpy as np

from .utils import ensure_dir, save_json


class LogLevel(Enum):
    """Log severity levels, ordered by rank."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"

    @property
    def rank(self) -> int:
        return list(LogLevel).index(self)


FAILURE_LEVELS = (LogLevel.ERROR, LogLevel.CRITICAL)
ENTRY_HEADER = ("timestamp", "module", "level", "message")

_ANSI = {
    LogLevel.DEBUG: "\033[36m",
    LogLevel.INFO: "\033[32m",
    LogLevel.WARNING: "\033[33m",
    LogLevel.ERROR: "\033[31m",
    LogLevel.CRITICAL: "\033[35m",
}


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays, paths and dataclasses into JSON values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def _echo(entry: dict, stream: TextIO) -> None:
    """Two-level console rendering: header line, then one indented line per context key."""
    color = _ANSI[LogLevel(entry["level"])] if stream.isatty() else ""
    reset = "\033[0m" if color else ""
    print(f"{color}[{entry['module']}] {entry['message']}{reset}", file=stream)
    for key, value in entry.items():
        if key not in ENTRY_HEADER:
            print(f"  {key}: {value}", file=stream)


class RunLogger:
    """
    Structured logger for one pipeline component.

    Entries are plain dicts: timestamp, module, level, message, then the
    keyword context in call order.
    """

    def __init__(
        self,
        module_name: str,
        log_dir: Optional[Path] = None,
        console_output: bool = True,
        file_output: bool = True,
        level: LogLevel = LogLevel.INFO,
        stream: Optional[TextIO] = None,
    ):
        """
        Args:
            module_name: Name of the component (e.g., "Trainer")
            log_dir: Directory for the JSONL file; no file when None
            console_output: Echo entries to the console stream
            file_output: Append entries to the JSONL file
            level: Entries below this level are dropped
            stream: Console stream, stderr by default
        """
        self.module_name = module_name
        self.console_output = console_output
        self.file_output = file_output
        self.level = level
        self._stream = stream
        self._entries: list[dict] = []
        self._log_file: Optional[Path] = None
        if log_dir is not None and file_output:
            started = datetime.now().strftime("%Y%m%d_%H%M%S")
            self._log_file = ensure_dir(log_dir) / f"{module_name.lower()}_{started}.jsonl"

    @property
    def log_file(self) -> Optional[Path]:
        return self._log_file

    def log(self, level: LogLevel, message: str, **kwargs: Any) -> None:
        if level.rank < self.level.rank:
            return
        entry = dict(zip(ENTRY_HEADER, (datetime.now().isoformat(), self.module_name, level.value, message)))
        entry.update((key, _jsonable(value)) for key, value in kwargs.items())

        self._entries.append(entry)
        if self.console_output:
            _echo(entry, self._stream or sys.stderr)
        if self._log_file is not None:
            with self._log_file.open("a", encoding="utf-8") as f:
                f.write(json.dumps(entry, default=str) + "\n")

    def debug(self, message: str, **kwargs: Any) -> None:
        self.log(LogLevel.DEBUG, message, **kwargs)

    def info(self, message: str, **kwargs: Any) -> None:
        self.log(LogLevel.INFO, message, **kwargs)

    def warning(self, message: str, **kwargs: Any) -> None:
        self.log(LogLevel.WARNING, message, **kwargs)

    def _failure(self, level: LogLevel, message: str, reason: Optional[str], fix: Optional[str], context: dict) -> None:
        extra = {k: v for k, v in (("reason", reason), ("suggested_fix", fix)) if v}
        self.log(level, message, **extra, **context)

    def error(self, message: str, reason: Optional[str] = None, suggested_fix: Optional[str] = None, **kwargs: Any) -> None:
        """Log an error with the cause and, where known, how to fix it."""
        self._failure(LogLevel.ERROR, message, reason, suggested_fix, kwargs)

    def critical(self, message: str, reason: Optional[str] = None, suggested_fix: Optional[str] = None, **kwargs: Any) -> None:
        """Log an error the run does not recover from."""
        self._failure(LogLevel.CRITICAL, message, reason, suggested_fix, kwargs)

    def log_init(self, **params: Any) -> None:
        self.info(f"{self.module_name} initialized", **params)

    def log_input(self, description: str, **data: Any) -> None:
        self.debug(f"Input: {description}", **data)

    def log_output(self, description: str, **data: Any) -> None:
        self.debug(f"Output: {description}", **data)

    def get_entries(self, level: Optional[LogLevel] = None) -> list[dict]:
        return [e for e in self._entries if level is None or e["level"] == level.value]

    def get_error_count(self) -> int:
        return sum(len(self.get_entries(lvl)) for lvl in FAILURE_LEVELS)

    def get_summary(self) -> dict:
        seen = Counter(e["level"] for e in self._entries)
        return {
            "module": self.module_name,
            "total_entries": len(self._entries),
            "by_level": {lvl.value: seen[lvl.value] for lvl in LogLevel},
            "log_file": None if self._log_file is None else str(self._log_file),
        }


def quiet_logger(module_name: str) -> RunLogger:
    """In-memory logger with no console or file output."""
    return RunLogger(module_name, console_output=False, file_output=False, level=LogLevel.DEBUG)


class PipelineLogger:
    """Per-module RunLoggers sharing one log directory, level and console setting."""

    SUMMARY_NAME = "pipeline_summary.json"

    def __init__(
        self,
        log_dir: Optional[Path] = None,
        console_output: bool = True,
        level: LogLevel = LogLevel.INFO,
    ):
        self.log_dir = None if log_dir is None else ensure_dir(log_dir)
        self.console_output = console_output
        self.level = level
        self._loggers: dict[str, RunLogger] = {}

    def get_logger(self, module_name: str) -> RunLogger:
        logger = self._loggers.get(module_name)
        if logger is None:
            logger = self._loggers[module_name] = RunLogger(
                module_name,
                log_dir=self.log_dir,
                console_output=self.console_output,
                file_output=self.log_dir is not None,
                level=self.level,
            )
        return logger

    def get_all_errors(self) -> list[dict]:
        """ERROR and CRITICAL entries of every module, oldest first."""
        failures = chain.from_iterable(
            logger.get_entries(lvl) for logger in self._loggers.values() for lvl in FAILURE_LEVELS
        )
        return sorted(failures, key=lambda e: e["timestamp"])

    def get_pipeline_summary(self) -> dict:
        return {
            "log_directory": None if self.log_dir is None else str(self.log_dir),
            "modules": {name: logger.get_summary() for name, logger in self._loggers.items()},
            "total_errors": sum(logger.get_error_count() for logger in self._loggers.values()),
        }

    def write_summary(self) -> Optional[Path]:
        """Write pipeline_summary.json into the log directory, if there is one."""
        if self.log_dir is None:
            return None
        path = self.log_dir / self.SUMMARY_NAME
        save_json(self.get_pipeline_summary(), path)
        return path
