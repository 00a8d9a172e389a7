"""Logging with runtime statistics for OD-TTE runs."""

import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, TextIO


class Colors:
    """ANSI color codes for terminal output."""
    RED = '\033[0;31m'
    GREEN = '\033[0;32m'
    YELLOW = '\033[1;33m'
    BLUE = '\033[0;34m'
    PURPLE = '\033[0;35m'
    CYAN = '\033[0;36m'
    NC = '\033[0m'  # No Color

    def __init__(self, enabled: bool = True):
        if not enabled:
            self.disable()

    def disable(self) -> None:
        """Blank the codes on this instance only."""
        self.RED = self.GREEN = self.YELLOW = self.BLUE = self.PURPLE = self.CYAN = self.NC = ''


class RunLogger:
    """Leveled console/file logger with named timers.

    ``quiet=True`` keeps the file log but silences the console, which is what
    library callers (tests, sweeps) usually want.
    """

    LEVEL_COLORS = {
        "INFO": "BLUE",
        "WARN": "YELLOW",
        "ERROR": "RED",
        "SUCCESS": "GREEN",
        "EPOCH": "PURPLE",
        "STATS": "CYAN",
    }

    def __init__(
        self,
        log_file: Optional[Path] = None,
        enable_colors: bool = True,
        quiet: bool = False,
    ):
        self.log_file = log_file
        self.quiet = quiet
        self.file_handle: Optional[TextIO] = None
        self.timers: Dict[str, float] = {}
        self.total_start_time: Optional[float] = None

        self.colors = Colors(enabled=enable_colors and sys.stdout.isatty())

        if log_file:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            self.file_handle = open(log_file, "a", encoding="utf-8")

    def close(self) -> None:
        if self.file_handle:
            self.file_handle.close()
            self.file_handle = None

    def __del__(self):
        self.close()

    def _format_message(self, level: str, message: str, epoch: Optional[int] = None) -> tuple:
        """Format log message for console and file."""
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        epoch_str = f"[Epoch #{epoch}] " if epoch is not None else ""

        color = getattr(self.colors, self.LEVEL_COLORS.get(level, "NC"))
        console_msg = f"{color}[{timestamp}] [{level}] {epoch_str}{message}{self.colors.NC}"
        file_msg = f"[{timestamp}] [{level}] {epoch_str}{message}"

        return console_msg, file_msg

    def log(self, level: str, message: str, epoch: Optional[int] = None) -> None:
        """Log a message to console and file."""
        console_msg, file_msg = self._format_message(level, message, epoch)

        if not self.quiet:
            print(console_msg)

        if self.file_handle:
            self.file_handle.write(file_msg + "\n")
            self.file_handle.flush()

    def info(self, message: str) -> None:
        self.log("INFO", message)

    def warn(self, message: str) -> None:
        self.log("WARN", message)

    def error(self, message: str) -> None:
        self.log("ERROR", message)

    def success(self, message: str) -> None:
        self.log("SUCCESS", message)

    def epoch(self, message: str, epoch: int) -> None:
        self.log("EPOCH", message, epoch)

    def stats(self, message: str) -> None:
        self.log("STATS", message)

    # Timer functions
    def start_timer(self, name: str) -> None:
        """Start a named timer."""
        self.timers[name] = time.perf_counter()

    def stop_timer(self, name: str) -> float:
        """Stop a timer and return elapsed seconds."""
        if name not in self.timers:
            return 0.0
        elapsed = time.perf_counter() - self.timers[name]
        del self.timers[name]
        return elapsed

    def start_total_timer(self) -> None:
        self.total_start_time = time.perf_counter()

    def get_total_runtime(self) -> float:
        if self.total_start_time is None:
            return 0.0
        return time.perf_counter() - self.total_start_time

    @staticmethod
    def format_duration(seconds: float) -> str:
        """Format seconds as human-readable duration."""
        if seconds < 60:
            return f"{seconds:.1f}s"
        elif seconds < 3600:
            minutes = int(seconds // 60)
            secs = seconds % 60
            return f"{minutes}m {secs:.0f}s"
        else:
            hours = int(seconds // 3600)
            minutes = int((seconds % 3600) // 60)
            return f"{hours}h {minutes}m"

    def log_epoch(
        self,
        epoch: int,
        train_mse: float,
        val_mse: float,
        lr: float,
        seconds: float,
        improved: bool,
    ) -> None:
        """Log one finished training epoch."""
        marker = " *" if improved else ""
        self.epoch(
            f"train_mse={train_mse:.5f} val_mse={val_mse:.5f} lr={lr:.2e} "
            f"({self.format_duration(seconds)}){marker}",
            epoch,
        )

    def separator(self, char: str = "=", width: int = 60) -> None:
        """Log a visual separator line."""
        line = char * width
        if not self.quiet:
            print(f"{self.colors.PURPLE}{line}{self.colors.NC}")
        if self.file_handle:
            self.file_handle.write(line + "\n")
            self.file_handle.flush()


def null_logger() -> RunLogger:
    """A logger that writes nowhere."""
    return RunLogger(enable_colors=False, quiet=True)
