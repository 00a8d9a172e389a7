"""Reproducibility record for one CLI run.

Inside the run directory:
    resolved_config.txt   # fully resolved key=value configuration
    args.json             # command-line arguments
    run.log               # log lines (written by RunLogger)
    summary.json          # final summary report
"""

import json
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List

from .config import RunConfig, RunDir
from .logger import RunLogger


@dataclass
class RunSummary:
    """Summary report for the run."""
    command: str
    start_time: str
    end_time: str = ""
    total_duration_seconds: float = 0.0
    exit_reason: str = ""
    exit_code: int = 0
    seed: int = 0
    outputs: List[str] = field(default_factory=list)
    metrics: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)


class RunRecorder:
    """Writes the resolved config, the arguments and a final summary.json."""

    def __init__(self, run_dir: RunDir, command: str, logger: RunLogger):
        self.run_dir = run_dir
        self.run_dir.init()
        self.logger = logger
        self.args_file = run_dir.base / "args.json"
        self.summary = RunSummary(command=command, start_time=datetime.now().isoformat())

    def save_config(self, config: RunConfig) -> None:
        """Save the resolved configuration next to the outputs."""
        config.save(self.run_dir.config_file)
        self.summary.seed = config.seed
        self.logger.info(f"Config saved to {self.run_dir.config_file.name}")

    def save_run_args(self, args: Any) -> None:
        """Save command-line arguments."""
        args_data = vars(args) if hasattr(args, "__dict__") else dict(args)
        args_data = {k: str(v) if isinstance(v, Path) else v
                     for k, v in args_data.items() if not callable(v)}
        with open(self.args_file, "w", encoding="utf-8") as f:
            json.dump(args_data, f, indent=2, default=str, sort_keys=True)

    def record_metrics(self, name: str, values: Dict[str, Any]) -> None:
        self.summary.metrics[name] = values

    def record_timing(self, name: str, seconds: float) -> None:
        self.summary.timings[name] = seconds

    def finalize(self, exit_reason: str, exit_code: int = 0) -> RunSummary:
        """Write summary.json and log the closing statistics."""
        total = self.logger.get_total_runtime()
        self.summary.end_time = datetime.now().isoformat()
        self.summary.total_duration_seconds = total
        self.summary.exit_reason = exit_reason
        self.summary.exit_code = exit_code
        self.summary.outputs = [p.name for p in self.run_dir.outputs()
                                if p != self.run_dir.summary_file]

        with open(self.run_dir.summary_file, "w", encoding="utf-8") as f:
            json.dump(asdict(self.summary), f, indent=2, default=str)

        self.logger.separator()
        self.logger.stats(f"Command: {self.summary.command}")
        self.logger.stats(f"Exit Reason: {exit_reason}")
        self.logger.stats(f"Total Duration: {self.logger.format_duration(total)}")
        self.logger.stats(f"Outputs: {', '.join(self.summary.outputs) or '(none)'}")
        return self.summary
