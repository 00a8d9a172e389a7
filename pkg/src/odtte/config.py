"""Configuration management for the OD-TTE lab.

All tunables live in small dataclasses. A run is described by ``RunConfig``,
which is read from a flat ``key=value`` text file (``#`` starts a comment) and
then overridden by command-line flags. Section fields are addressed with a
dotted key, e.g. ``train.initial_lr=1e-4`` or ``features.quant_grid=0.001``.
"""

import os
import zlib
from dataclasses import dataclass, field, fields, asdict
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError

# (lat_min, lat_max, lon_min, lon_max) enclosing the Greater Toronto Area
GTA_BBOX: Tuple[float, float, float, float] = (43.40, 44.10, -80.10, -78.90)
DEFAULT_START_DATE = "2017-01-02"  # a Monday

THREADS_ENV = "ODTTE_THREADS"


def _check_range(name: str, rng: Tuple[float, float]) -> None:
    if not rng[1] > rng[0]:
        raise ConfigurationError(f"{name} must satisfy max > min, got {rng}")


class _Section:
    """dict round trip shared by the config sections."""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict):
        """Build from a dict; missing keys keep their defaults, unknown keys are rejected."""
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass
class FeatureConfig(_Section):
    """How a DeliveryRecord is turned into the 12-dimensional input."""
    bbox: Tuple[float, float, float, float] = GTA_BBOX
    quant_grid: float = 0.001
    quantize_origin: bool = False
    temp_range: Tuple[float, float] = (-10.0, 30.0)
    rain_range: Tuple[float, float] = (0.0, 40.0)
    snow_precip_range: Tuple[float, float] = (0.0, 16.0)
    snow_ground_range: Tuple[float, float] = (0.0, 50.0)
    week_count: int = 25
    start_date: str = DEFAULT_START_DATE

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        lat_min, lat_max, lon_min, lon_max = self.bbox
        _check_range("bbox latitude", (lat_min, lat_max))
        _check_range("bbox longitude", (lon_min, lon_max))
        for name in ("temp_range", "rain_range", "snow_precip_range", "snow_ground_range"):
            value = tuple(float(v) for v in getattr(self, name))
            _check_range(name, value)
            setattr(self, name, value)
        if self.quant_grid <= 0:
            raise ConfigurationError(f"quant_grid must be > 0, got {self.quant_grid}")
        if self.week_count < 1:
            raise ConfigurationError(f"week_count must be >= 1, got {self.week_count}")
        self.start = date.fromisoformat(self.start_date)


@dataclass
class SyntheticConfig(_Section):
    """Synthetic last-mile generator settings.

    The deterministic duration terms are centered on their population means,
    and the lognormal noise is solved so that the clamped durations hit the
    target mean, median and variance.
    """
    n_samples: int = 10000
    n_depots: int = 72
    n_delivery_points: int = 2000
    bbox: Tuple[float, float, float, float] = GTA_BBOX
    weeks: int = 25
    start_date: str = DEFAULT_START_DATE
    seed: int = 0
    depot_margin_deg: float = 0.05
    point_spread_km: float = 2.5
    depot_offset_sd: float = 0.6
    distance_coef: float = 0.05
    saturday_discount: float = 0.2
    sunday_discount: float = 0.6
    rain_coef: float = 0.01
    snow_precip_coef: float = 0.05
    snow_ground_coef: float = 0.01
    cold_coef: float = 0.01
    target_mean: float = 3.19
    target_median: float = 2.96
    target_variance: float = 2.88
    min_hours: float = 0.1
    max_hours: float = 14.0
    shard_size: int = 10000

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        if self.n_samples < 0:
            raise ConfigurationError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.n_depots < 1:
            raise ConfigurationError(f"n_depots must be >= 1, got {self.n_depots}")
        if self.n_delivery_points < self.n_depots:
            raise ConfigurationError("n_delivery_points must be >= n_depots")
        if self.weeks < 1:
            raise ConfigurationError(f"weeks must be >= 1, got {self.weeks}")
        if not 0 < self.min_hours < self.max_hours:
            raise ConfigurationError("need 0 < min_hours < max_hours")
        if self.target_median >= self.target_mean:
            raise ConfigurationError("target_median must be below target_mean (right skew)")
        if self.shard_size < 1:
            raise ConfigurationError("shard_size must be >= 1")
        self.start = date.fromisoformat(self.start_date)


@dataclass
class TrainConfig(_Section):
    """Optimizer, schedule and stopping rule."""
    initial_lr: float = 1e-4
    lr_halving_period: int = 40
    batch_size: int = 64
    patience: int = 25
    max_epochs: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    target_train_mse: Optional[float] = None
    record_wall_time: bool = False

    def __post_init__(self):
        # lr = 0 is allowed: it freezes the model (used to trace the stopping rule)
        if self.initial_lr < 0:
            raise ConfigurationError("initial_lr must be >= 0")
        for name in ("lr_halving_period", "batch_size", "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigurationError("Adam betas must lie in [0, 1) and epsilon > 0")


@dataclass
class SBTTEParams(_Section):
    """Neighbor-baseline radii and expansion policy."""
    radius_o: float = 0.5
    radius_d: float = 1.0
    min_neighbors: int = 5
    growth: float = 2.0
    max_expansions: int = 4
    temporal_filter: bool = False
    cell_size: float = 0.01

    def __post_init__(self):
        if self.radius_o <= 0 or self.radius_d <= 0:
            raise ConfigurationError("SB-TTE radii must be > 0")
        if self.min_neighbors < 1:
            raise ConfigurationError("min_neighbors must be >= 1")
        if self.growth <= 1:
            raise ConfigurationError("growth must be > 1")
        if self.max_expansions < 0:
            raise ConfigurationError("max_expansions must be >= 0")


@dataclass
class AutoencoderConfig(_Section):
    """Training of the linear projection autoencoder."""
    lr: float = 1e-2
    lr_halving_period: int = 300
    max_epochs: int = 4000
    patience: int = 200
    seed: int = 0
    use_bias: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("autoencoder lr, max_epochs and patience must be positive")


_SECTIONS = {
    "features": FeatureConfig,
    "synthetic": SyntheticConfig,
    "train": TrainConfig,
    "sbtte": SBTTEParams,
    "ae": AutoencoderConfig,
}

# keys that feed more than one section
_SHARED_KEYS = {
    "bbox": (("features", "bbox"), ("synthetic", "bbox")),
    "start_date": (("features", "start_date"), ("synthetic", "start_date")),
    "weeks": (("features", "week_count"), ("synthetic", "weeks")),
}


def _parse_value(key: str, text: str, current):
    """Coerce a text value to the type of the field's current value."""
    text = text.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            items = [t for t in text.split(",") if t.strip()]
            kind = type(current[0]) if current else float
            return tuple(kind(t.strip()) for t in items)
        if current is None:
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None


@dataclass
class RunConfig:
    """Fully resolved configuration for one CLI run."""
    seed: int = 0
    family: str = "resnet"
    depth: int = 8
    se: bool = False
    se_ratio: int = 16
    se_bias: bool = True
    head_widths: Tuple[int, ...] = (50,)
    train_fraction: float = 0.70
    features: FeatureConfig = field(default_factory=FeatureConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sbtte: SBTTEParams = field(default_factory=SBTTEParams)
    ae: AutoencoderConfig = field(default_factory=AutoencoderConfig)

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")

    # -- flat key=value view -------------------------------------------------

    def to_pairs(self) -> Dict[str, str]:
        """Flatten into dotted keys with text values."""
        pairs: Dict[str, str] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _SECTIONS:
                for sub in fields(value):
                    pairs[f"{f.name}.{sub.name}"] = _format_value(getattr(value, sub.name))
            else:
                pairs[f.name] = _format_value(value)
        return pairs

    def with_overrides(self, overrides: Dict[str, str]) -> "RunConfig":
        """Return a new config with ``overrides`` applied (flags win over file)."""
        top = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in _SECTIONS}
        sections = {name: getattr(self, name).to_dict() for name in _SECTIONS}

        for key, text in overrides.items():
            if key in _SHARED_KEYS:
                for section, name in _SHARED_KEYS[key]:
                    sections[section][name] = _parse_value(key, text, sections[section][name])
            elif "." in key:
                section, name = key.split(".", 1)
                if section not in sections or name not in sections[section]:
                    raise ConfigurationError(f"unknown config key: {key}")
                sections[section][name] = _parse_value(key, text, sections[section][name])
            elif key in top:
                top[key] = _parse_value(key, text, top[key])
            else:
                raise ConfigurationError(f"unknown config key: {key}")

        built = {name: cls.from_dict(sections[name]) for name, cls in _SECTIONS.items()}
        return RunConfig(**top, **built)

    def to_text(self) -> str:
        lines = ["# resolved odtte run configuration"]
        lines += [f"{k}={v}" for k, v in sorted(self.to_pairs().items())]
        return "\n".join(lines) + "\n"

    def save(self, path: Path) -> None:
        """Write the resolved config as sorted key=value lines."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @staticmethod
    def parse_text(text: str) -> Dict[str, str]:
        pairs: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
        return pairs

    @classmethod
    def load(cls, path: Optional[Path], overrides: Optional[Dict[str, str]] = None) -> "RunConfig":
        """Load config from a key=value file (defaults if absent), then apply overrides."""
        pairs: Dict[str, str] = {}
        if path is not None and Path(path).exists():
            pairs = cls.parse_text(Path(path).read_text(encoding="utf-8"))
        pairs.update(overrides or {})
        return cls().with_overrides(pairs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def derive_seed(seed: int, name: str) -> int:
    """Derive an independent named sub-seed (data, split, init, shuffle, ae)."""
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


def worker_threads() -> int:
    """Worker thread cap from ODTTE_THREADS (default 1 keeps runs deterministic)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


class RunDir:
    """Manages the output directory of one run."""

    def __init__(self, base_path: Path):
        self.base = Path(base_path)
        self.config_file = self.base / "resolved_config.txt"
        self.log_file = self.base / "run.log"
        self.summary_file = self.base / "summary.json"
        self.data_csv = self.base / "data.csv"
        self.checkpoint = self.base / "model.ckpt"
        self.history_csv = self.base / "history.csv"
        self.predictions_csv = self.base / "predictions.csv"
        self.metrics_json = self.base / "metrics.json"
        self.projection_csv = self.base / "projection.csv"
        self.sweep_csv = self.base / "depth_sweep.csv"
        self.baselines_csv = self.base / "baselines.csv"
        self.depot_map_csv = self.base / "depot_map.csv"

    def exists(self) -> bool:
        return self.base.exists()

    def init(self) -> None:
        self.base.mkdir(parents=True, exist_ok=True)

    def breakdown_csv(self, dimension: str) -> Path:
        return self.base / f"breakdown_{dimension}.csv"

    def centroids_csv(self, by: str) -> Path:
        return self.base / f"centroids_{by}.csv"

    def predictions_for(self, method: str) -> Path:
        return self.base / f"predictions_{method}.csv"

    def outputs(self) -> List[Path]:
        """All files currently in the run directory."""
        if not self.base.exists():
            return []
        return sorted(p for p in self.base.iterdir() if p.is_file())
