"""Data structures shared across modules, with JSON/CSV serialization."""

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Tuple

FAMILIES = ("vgg", "resnet", "mlp")


@dataclass
class ModelSpec:
    """Architecture description.

    ``widths`` is the depth summary (one channel width per block) for the
    convolutional families, or the hidden layer widths for an MLP.
    """
    family: str
    widths: Tuple[int, ...]
    se: bool = False
    se_ratio: int = 16
    se_bias: bool = True
    head_widths: Tuple[int, ...] = (50,)
    input_length: int = 12
    input_channels: int = 1

    def __post_init__(self):
        self.family = self.family.lower()
        self.widths = tuple(int(w) for w in self.widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)

    @property
    def name(self) -> str:
        if self.family == "mlp":
            return f"MLP[{'x'.join(str(w) for w in self.widths)}]"
        base = f"{'VGG' if self.family == 'vgg' else 'ResNet'}-{len(self.widths)}"
        return f"SE-{base}" if self.se else base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(
            family=data["family"],
            widths=tuple(data["widths"]),
            se=data.get("se", False),
            se_ratio=data.get("se_ratio", 16),
            se_bias=data.get("se_bias", True),
            head_widths=tuple(data.get("head_widths", (50,))),
            input_length=data.get("input_length", 12),
            input_channels=data.get("input_channels", 1),
        )


@dataclass
class EpochRecord:
    """One row of the training history."""
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float = 0.0


HISTORY_COLUMNS = ("epoch", "train_mse", "val_mse", "lr", "seconds")


@dataclass
class TrainHistory:
    """Per-epoch losses and learning rates of one training run."""
    epochs: List[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    def val_losses(self) -> List[float]:
        return [e.val_mse for e in self.epochs]

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation loss (earliest on ties), 0 if empty."""
        if not self.epochs:
            return 0
        losses = self.val_losses()
        return self.epochs[losses.index(min(losses))].epoch

    @property
    def best_val_mse(self) -> float:
        return min(self.val_losses()) if self.epochs else math.inf

    def __len__(self) -> int:
        return len(self.epochs)

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def to_csv(self, path: Path, include_seconds: bool = False) -> None:
        """Write epoch,train_mse,val_mse,lr,seconds; seconds blank unless requested."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(HISTORY_COLUMNS)
            for e in self.epochs:
                seconds = repr(e.seconds) if include_seconds else ""
                writer.writerow([e.epoch, repr(e.train_mse), repr(e.val_mse), repr(e.lr), seconds])

    @classmethod
    def from_csv(cls, path: Path) -> "TrainHistory":
        history = cls()
        with open(path, "r", encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                history.append(EpochRecord(
                    epoch=int(row["epoch"]),
                    train_mse=float(row["train_mse"]),
                    val_mse=float(row["val_mse"]),
                    lr=float(row["lr"]),
                    seconds=float(row["seconds"]) if row.get("seconds") else 0.0,
                ))
        return history


@dataclass
class MetricsReport:
    """Evaluation quantities over a prediction set.

    ``mape`` and ``mare`` are fractions; they become percentages only in
    ``to_report_dict``. ``ew`` is None until an error window is attached.
    """
    mse: float
    rmse: float
    mae: float
    mape: float
    mare: float
    n: int
    ew: Optional[float] = None
    ew_p: float = 0.9

    @property
    def ew_key(self) -> str:
        return f"ew{int(round(self.ew_p * 100))}_h"

    def to_report_dict(self) -> dict:
        """Flat report with fixed key names, percentages for MAPE/MARE."""
        return {
            "mse": self.mse,
            "rmse": self.rmse,
            "mae": self.mae,
            "mape_pct": self.mape * 100.0,
            "mare_pct": self.mare * 100.0,
            self.ew_key: self.ew,
            "n": self.n,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_report_dict(), indent=indent)

    def save(self, path: Path) -> None:
        """Save the flat report to a JSON file."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def from_report_dict(cls, data: dict) -> "MetricsReport":
        ew_key = next((k for k in data if k.startswith("ew") and k.endswith("_h")), "ew90_h")
        return cls(
            mse=data["mse"],
            rmse=data["rmse"],
            mae=data["mae"],
            mape=data["mape_pct"] / 100.0,
            mare=data["mare_pct"] / 100.0,
            n=data["n"],
            ew=data.get(ew_key),
            ew_p=int(ew_key[2:-2]) / 100.0,
        )

    @classmethod
    def load(cls, path: Path) -> "MetricsReport":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_report_dict(json.load(f))


@dataclass
class TTestResult:
    """Paired t-test outcome. ``degenerate`` flags zero-variance differences."""
    t: float
    p_value: float
    df: int
    n: int
    mean_diff: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)
