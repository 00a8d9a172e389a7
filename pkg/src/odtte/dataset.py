"""Synthetic last-mile data, CSV interchange and train/test splitting.

The generator builds a fixed "world" (depots, delivery points, a daily
weather table) and then draws deliveries shard by shard:

    duration = target_mean
             + point term (depot offset + distance)   centered
             + hour-of-day traffic term               centered
             + day term (weekend discount + weather)  centered
             + (L - E[L]),  L ~ lognormal(mu, sigma)

Every deterministic term is centered on its exact population mean, so the
mean of the sum is ``target_mean``. The lognormal is then solved so that the
total variance and third cumulant hit the target variance and the skew
implied by the target median. Durations are clamped to [min_hours, max_hours].
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .config import FeatureConfig, SyntheticConfig, worker_threads
from .errors import CalibrationError, ContractError, DomainError, ParseError
from .featurization import DeliveryRecord, encode_records, haversine_np
from .logger import RunLogger, null_logger

CSV_COLUMNS: Tuple[str, ...] = (
    "depot_id", "o_lat", "o_lon", "d_lat", "d_lon", "ofd_time", "delivered_time",
    "temp_c", "rain_mm", "snow_precip_cm", "snow_ground_cm",
)

KM_PER_DEG_LAT = 111.19

# Out-for-delivery scans cluster in the morning
OFD_HOUR_WEIGHTS: Dict[int, float] = {
    6: 0.02, 7: 0.08, 8: 0.22, 9: 0.30, 10: 0.18, 11: 0.10, 12: 0.05, 13: 0.03, 14: 0.02,
}
# Extra hours from congestion by scan hour
TRAFFIC_PROFILE: Dict[int, float] = {
    6: -0.30, 7: 0.20, 8: 0.45, 9: 0.30, 10: 0.05, 11: -0.15, 12: -0.25, 13: -0.35, 14: -0.45,
}
# Monday..Sunday relative volume
DOW_WEIGHTS: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 0.35, 0.15)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Ordered records plus provenance. ``ids`` survive subsetting."""
    records: List[DeliveryRecord] = field(default_factory=list)
    ids: Optional[np.ndarray] = None
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.records), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (len(self.records),):
            raise ContractError("ids must have one entry per record")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index: int) -> DeliveryRecord:
        return self.records[index]

    def targets(self) -> np.ndarray:
        return np.array([r.duration for r in self.records], dtype=np.float64)

    def features(self, cfg: FeatureConfig) -> np.ndarray:
        return encode_records(self.records, cfg)

    def subset(self, positions: Sequence[int]) -> "Dataset":
        positions = [int(p) for p in positions]
        return Dataset(
            records=[self.records[p] for p in positions],
            ids=self.ids[positions] if positions else np.zeros(0, dtype=np.int64),
            provenance=dict(self.provenance),
        )

    def depot_locations(self) -> Dict[str, Tuple[float, float]]:
        """Origin coordinates per depot, from the first record of each depot."""
        locations: Dict[str, Tuple[float, float]] = {}
        for r in self.records:
            locations.setdefault(r.depot_id, (r.o_lat, r.o_lon))
        return locations


def split(dataset: Dataset, train_fraction: float = 0.70, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded random split; the train side gets floor(fraction * N) records."""
    if len(dataset) == 0:
        raise ContractError("cannot split an empty dataset")
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = math.floor(train_fraction * n + 1e-9)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def format_timestamp(t: datetime) -> str:
    """ISO-8601 UTC with a trailing Z."""
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc).replace(tzinfo=None)
    return t.isoformat() + "Z"


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_csv(dataset: Dataset, path: Path) -> None:
    """Write records in order, plus provenance in ``<path>.meta.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in dataset.records:
            writer.writerow([
                r.depot_id, repr(r.o_lat), repr(r.o_lon), repr(r.d_lat), repr(r.d_lon),
                format_timestamp(r.ofd_time), format_timestamp(r.delivered_time),
                repr(r.temp), repr(r.rain), repr(r.snow_precip), repr(r.snow_ground),
            ])
    meta = dict(dataset.provenance)
    meta["n_records"] = len(dataset)
    with open(_meta_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_csv(path: Path, logger: Optional[RunLogger] = None) -> Dataset:
    """Read a dataset CSV. Rows are numbered from 1 (the first record) in errors."""
    logger = logger or null_logger()
    path = Path(path)
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    records: List[DeliveryRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s): {', '.join(missing)}", row=0)
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            logger.warn(f"{path.name}: ignoring unknown column(s) {', '.join(extra)}")

        for row_num, row in enumerate(reader, start=1):
            records.append(_parse_row(row, row_num))

    provenance: Dict[str, str] = {"source": str(path)}
    meta = _meta_path(path)
    if meta.exists():
        try:
            provenance.update({k: v for k, v in json.loads(meta.read_text(encoding="utf-8")).items()
                               if k != "n_records"})
        except json.JSONDecodeError:
            logger.warn(f"{meta.name}: unreadable provenance, ignored")
    return Dataset(records=records, provenance=provenance)


def _parse_row(row: Dict[str, str], row_num: int) -> DeliveryRecord:
    def number(column: str) -> float:
        text = row.get(column)
        try:
            value = float(text)
        except (TypeError, ValueError):
            raise ParseError(f"{column} is not a number: {text!r}", row=row_num) from None
        if not math.isfinite(value):
            raise ParseError(f"{column} is not finite: {text!r}", row=row_num)
        return value

    def timestamp(column: str) -> datetime:
        text = row.get(column) or ""
        try:
            return parse_timestamp(text)
        except ValueError:
            raise ParseError(f"malformed timestamp in {column}: {text!r}", row=row_num) from None

    depot_id = (row.get("depot_id") or "").strip()
    if not depot_id:
        raise ParseError("empty depot_id", row=row_num)
    try:
        return DeliveryRecord(
            depot_id=depot_id,
            o_lat=number("o_lat"), o_lon=number("o_lon"),
            d_lat=number("d_lat"), d_lon=number("d_lon"),
            ofd_time=timestamp("ofd_time"), delivered_time=timestamp("delivered_time"),
            temp=number("temp_c"), rain=number("rain_mm"),
            snow_precip=number("snow_precip_cm"), snow_ground=number("snow_ground_cm"),
        )
    except DomainError as e:
        raise ParseError(f"nonpositive duration: {e}", row=row_num) from None


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _moments(values: np.ndarray, probs: np.ndarray) -> Tuple[float, float, float]:
    """Mean, variance and third central moment of a discrete distribution."""
    mean = float(np.dot(probs, values))
    centered = values - mean
    return mean, float(np.dot(probs, centered ** 2)), float(np.dot(probs, centered ** 3))


@dataclass
class SyntheticWorld:
    """Everything shared by all shards of one generation run."""
    depot_ids: List[str]
    depot_lat: np.ndarray
    depot_lon: np.ndarray
    point_depot: np.ndarray
    point_lat: np.ndarray
    point_lon: np.ndarray
    point_term: np.ndarray
    hours: np.ndarray
    hour_probs: np.ndarray
    hour_term: np.ndarray
    dow_probs: np.ndarray
    weather: np.ndarray  # (days, 4): temp, rain, snow_precip, snow_ground
    day_term: np.ndarray  # (weeks, 7)
    mu: float
    sigma: float
    noise_mean: float


def _daily_weather(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Seasonal temperatures with rain, snowfall and a melting snow pack."""
    days = cfg.weeks * 7
    season = np.linspace(0.0, 1.0, days) if days > 1 else np.zeros(1)
    temp = np.round(-7.0 + 27.0 * season + rng.normal(0.0, 3.5, days), 1)
    rain = np.where((temp > 0) & (rng.random(days) < 0.30), rng.exponential(6.0, days), 0.0)
    snow = np.where((temp <= 1) & (rng.random(days) < 0.30), rng.exponential(3.0, days), 0.0)
    rain = np.round(np.minimum(rain, 60.0), 1)
    snow = np.round(np.minimum(snow, 25.0), 1)

    ground = np.zeros(days)
    pack = 8.0 if temp[0] <= 0 else 0.0
    for d in range(days):
        melt = 1.5 * temp[d] if temp[d] > 0 else 0.0
        pack = max(0.0, pack + snow[d] - melt)
        ground[d] = pack
    return np.column_stack([temp, rain, snow, np.round(ground, 1)])


def _solve_noise(cfg: SyntheticConfig, var_d: float, k3_d: float) -> Tuple[float, float]:
    """Lognormal (mu, sigma) that completes the target variance and skew."""
    var_l = cfg.target_variance - var_d
    if var_l <= 0:
        raise CalibrationError(
            f"deterministic terms already explain variance {var_d:.3f} >= target {cfg.target_variance}"
        )
    # median ~ mean - k3 / (6 var) to first order
    k3_target = 6.0 * (cfg.target_mean - cfg.target_median) * cfg.target_variance
    k3_l = k3_target - k3_d
    if k3_l <= 0:
        raise CalibrationError("deterministic terms are too right-skewed for the target median")

    skew = k3_l / var_l ** 1.5

    def gap(w: float) -> float:
        return (w + 2.0) * math.sqrt(w - 1.0) - skew

    high = 2.0
    while gap(high) < 0:
        high *= 2.0
    w = brentq(gap, 1.0 + 1e-15, high, xtol=1e-15)
    sigma2 = math.log(w)
    noise_mean = math.sqrt(var_l / (w - 1.0))
    return math.log(noise_mean) - sigma2 / 2.0, math.sqrt(sigma2)


def build_world(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticWorld:
    """Place depots and delivery points, draw weather and calibrate the noise."""
    lat_min, lat_max, lon_min, lon_max = cfg.bbox
    m = cfg.depot_margin_deg
    if lat_max - lat_min <= 2 * m or lon_max - lon_min <= 2 * m:
        raise CalibrationError("depot margin leaves no room inside the bounding box")

    depot_lat = rng.uniform(lat_min + m, lat_max - m, cfg.n_depots)
    depot_lon = rng.uniform(lon_min + m, lon_max - m, cfg.n_depots)
    raw = rng.normal(0.0, 1.0, cfg.n_depots)
    spread = raw.std()
    offsets = (raw - raw.mean()) / spread * cfg.depot_offset_sd if spread > 0 else np.zeros(cfg.n_depots)

    point_depot = np.arange(cfg.n_delivery_points) % cfg.n_depots
    km_lat = rng.normal(0.0, cfg.point_spread_km, cfg.n_delivery_points)
    km_lon = rng.normal(0.0, cfg.point_spread_km, cfg.n_delivery_points)
    base_lat = depot_lat[point_depot]
    point_lat = np.clip(base_lat + km_lat / KM_PER_DEG_LAT, lat_min, lat_max)
    point_lon = np.clip(
        depot_lon[point_depot] + km_lon / (KM_PER_DEG_LAT * np.cos(np.radians(base_lat))),
        lon_min, lon_max,
    )

    # points are drawn uniformly, so their population is the sampling distribution
    dist = haversine_np(base_lat, depot_lon[point_depot], point_lat, point_lon)
    point_raw = offsets[point_depot] + cfg.distance_coef * dist
    uniform = np.full(cfg.n_delivery_points, 1.0 / cfg.n_delivery_points)
    p_mean, p_var, p_k3 = _moments(point_raw, uniform)

    hours = np.array(sorted(OFD_HOUR_WEIGHTS), dtype=np.int64)
    hour_probs = np.array([OFD_HOUR_WEIGHTS[h] for h in hours])
    hour_probs /= hour_probs.sum()
    hour_raw = np.array([TRAFFIC_PROFILE[h] for h in hours])
    h_mean, h_var, h_k3 = _moments(hour_raw, hour_probs)

    weather = _daily_weather(cfg, rng)
    dow_probs = np.array(DOW_WEIGHTS) / sum(DOW_WEIGHTS)
    discount = np.zeros(7)
    discount[5], discount[6] = cfg.saturday_discount, cfg.sunday_discount
    temp, rain, snow, ground = weather.T
    penalty = (cfg.rain_coef * rain + cfg.snow_precip_coef * snow
               + cfg.snow_ground_coef * ground + cfg.cold_coef * np.maximum(0.0, -temp))
    day_raw = penalty.reshape(cfg.weeks, 7) - discount[None, :]
    day_probs = np.outer(np.full(cfg.weeks, 1.0 / cfg.weeks), dow_probs)
    d_mean, d_var, d_k3 = _moments(day_raw.reshape(-1), day_probs.reshape(-1))

    mu, sigma = _solve_noise(cfg, p_var + h_var + d_var, p_k3 + h_k3 + d_k3)

    return SyntheticWorld(
        depot_ids=[f"D{i + 1:02d}" for i in range(cfg.n_depots)],
        depot_lat=depot_lat,
        depot_lon=depot_lon,
        point_depot=point_depot,
        point_lat=point_lat,
        point_lon=point_lon,
        point_term=point_raw - p_mean,
        hours=hours,
        hour_probs=hour_probs,
        hour_term=hour_raw - h_mean,
        dow_probs=dow_probs,
        weather=weather,
        day_term=day_raw - d_mean,
        mu=mu,
        sigma=sigma,
        noise_mean=math.exp(mu + sigma ** 2 / 2.0),
    )


@dataclass
class _Shard:
    records: List[DeliveryRecord]
    nonpositive: int


def _generate_shard(cfg: SyntheticConfig, world: SyntheticWorld, n: int,
                    seed: np.random.SeedSequence) -> _Shard:
    rng = np.random.default_rng(seed)
    point = rng.integers(0, len(world.point_depot), n)
    week = rng.integers(0, cfg.weeks, n)
    dow = rng.choice(7, size=n, p=world.dow_probs)
    hour_idx = rng.choice(len(world.hours), size=n, p=world.hour_probs)
    minute = rng.integers(0, 60, n)
    second = rng.integers(0, 60, n)
    noise = rng.lognormal(world.mu, world.sigma, n)

    duration = (cfg.target_mean + world.point_term[point] + world.hour_term[hour_idx]
                + world.day_term[week, dow] + (noise - world.noise_mean))
    nonpositive = int(np.count_nonzero(duration <= 0))
    duration = np.clip(duration, cfg.min_hours, cfg.max_hours)

    start = datetime(cfg.start.year, cfg.start.month, cfg.start.day, tzinfo=timezone.utc)
    records: List[DeliveryRecord] = []
    for i in range(n):
        p, d = int(point[i]), int(week[i]) * 7 + int(dow[i])
        depot = int(world.point_depot[p])
        ofd = start + timedelta(days=d, hours=int(world.hours[hour_idx[i]]),
                                minutes=int(minute[i]), seconds=int(second[i]))
        temp, rain, snow, ground = world.weather[d]
        records.append(DeliveryRecord(
            depot_id=world.depot_ids[depot],
            o_lat=float(world.depot_lat[depot]),
            o_lon=float(world.depot_lon[depot]),
            d_lat=float(world.point_lat[p]),
            d_lon=float(world.point_lon[p]),
            ofd_time=ofd,
            delivered_time=ofd + timedelta(seconds=max(1, round(float(duration[i]) * 3600))),
            temp=float(temp),
            rain=float(rain),
            snow_precip=float(snow),
            snow_ground=float(ground),
        ))
    return _Shard(records, nonpositive)


def config_digest(cfg: SyntheticConfig) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def generate_synthetic(cfg: SyntheticConfig, logger: Optional[RunLogger] = None) -> Dataset:
    """Deterministic synthetic dataset; shard i always draws from the same seed."""
    root = np.random.SeedSequence(cfg.seed)
    n_shards = -(-cfg.n_samples // cfg.shard_size)
    children = root.spawn(1 + n_shards)
    world = build_world(cfg, np.random.default_rng(children[0]))
    if logger:
        logger.stats(f"noise lognormal mu={world.mu:.4f} sigma={world.sigma:.4f}")

    sizes = [min(cfg.shard_size, cfg.n_samples - i * cfg.shard_size) for i in range(n_shards)]
    threads = min(worker_threads(), max(1, n_shards))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            shards = list(pool.map(lambda i: _generate_shard(cfg, world, sizes[i], children[i + 1]),
                                   range(n_shards)))
    else:
        shards = [_generate_shard(cfg, world, sizes[i], children[i + 1]) for i in range(n_shards)]

    nonpositive = sum(s.nonpositive for s in shards)
    if cfg.n_samples and nonpositive > 0.10 * cfg.n_samples:
        raise CalibrationError(
            f"{nonpositive}/{cfg.n_samples} durations were nonpositive before clamping"
        )

    records = [r for s in shards for r in s.records]
    provenance = {
        "source": "synthetic",
        "seed": str(cfg.seed),
        "config_digest": config_digest(cfg),
    }
    return Dataset(records=records, provenance=provenance)
