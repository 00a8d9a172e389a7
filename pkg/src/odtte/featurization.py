"""Turn delivery records into the normalized 12-dimensional model input.

Vector order (embedded in checkpoints, 1D convolutions are order-sensitive):

    o_lon, o_lat, d_lon, d_lat, dist, hour, dow, week,
    temp, rain, snow_precip, snow_ground
"""

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Sequence, Tuple

import numpy as np

from .config import FeatureConfig
from .errors import ContractError, DomainError, FeatureRangeError

# Earth's mean radius in kilometers
EARTH_RADIUS_KM = 6371.0

FEATURE_ORDER: Tuple[str, ...] = (
    "o_lon_n", "o_lat_n", "d_lon_n", "d_lat_n", "dist_n",
    "hour_n", "dow_n", "week_n",
    "temp_n", "rain_n", "snow_precip_n", "snow_ground_n",
)
N_FEATURES = len(FEATURE_ORDER)


@dataclass(frozen=True)
class DeliveryRecord:
    """One last-mile delivery: depot origin, destination, scans and daily weather."""
    depot_id: str
    o_lat: float
    o_lon: float
    d_lat: float
    d_lon: float
    ofd_time: datetime
    delivered_time: datetime
    temp: float
    rain: float
    snow_precip: float
    snow_ground: float

    def __post_init__(self):
        if not self.delivered_time > self.ofd_time:
            raise DomainError(
                f"delivered_time {self.delivered_time.isoformat()} is not after "
                f"ofd_time {self.ofd_time.isoformat()}"
            )

    @property
    def duration(self) -> float:
        """Hours between the out-for-delivery and delivered scans."""
        return (self.delivered_time - self.ofd_time).total_seconds() / 3600.0


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometers."""
    if abs(lat1) > 90 or abs(lat2) > 90:
        raise DomainError(f"latitude outside [-90, 90]: {lat1}, {lat2}")
    lat1_rad = math.radians(lat1)
    lat2_rad = math.radians(lat2)
    dlat = math.radians(lat2 - lat1)
    dlon = math.radians(lon2 - lon1)

    a = math.sin(dlat / 2) ** 2 + math.cos(lat1_rad) * math.cos(lat2_rad) * math.sin(dlon / 2) ** 2
    c = 2 * math.asin(min(1.0, math.sqrt(a)))
    return EARTH_RADIUS_KM * c


def haversine_np(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized ``haversine`` over broadcastable arrays."""
    lat1, lon1, lat2, lon2 = (np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2))
    if np.any(np.abs(lat1) > 90) or np.any(np.abs(lat2) > 90):
        raise DomainError("latitude outside [-90, 90]")
    lat1_rad, lat2_rad = np.radians(lat1), np.radians(lat2)
    dlat = np.radians(lat2 - lat1)
    dlon = np.radians(lon2 - lon1)
    a = np.sin(dlat / 2) ** 2 + np.cos(lat1_rad) * np.cos(lat2_rad) * np.sin(dlon / 2) ** 2
    return EARTH_RADIUS_KM * 2 * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def quantize_coord(value: float, grid: float) -> float:
    """Snap to the nearest multiple of ``grid``, halves away from zero."""
    if grid <= 0:
        raise ContractError(f"grid must be > 0, got {grid}")
    steps = math.floor(abs(value) / grid + 0.5)
    return round(math.copysign(steps * grid, value), 12)


def bbox_diagonal_km(cfg: FeatureConfig) -> float:
    lat_min, lat_max, lon_min, lon_max = cfg.bbox
    return haversine(lat_min, lon_min, lat_max, lon_max)


def check_in_bbox(rec: DeliveryRecord, cfg: FeatureConfig) -> None:
    """Raise FeatureRangeError naming the first coordinate outside the box."""
    lat_min, lat_max, lon_min, lon_max = cfg.bbox
    for name, value, low, high in (
        ("o_lat", rec.o_lat, lat_min, lat_max),
        ("o_lon", rec.o_lon, lon_min, lon_max),
        ("d_lat", rec.d_lat, lat_min, lat_max),
        ("d_lon", rec.d_lon, lon_min, lon_max),
    ):
        if not low <= value <= high:
            raise FeatureRangeError(name, value, low, high)


def week_index(ofd_time: datetime, cfg: FeatureConfig) -> int:
    """Weeks since the dataset start, clamped to [0, week_count - 1]."""
    weeks = (ofd_time.date() - cfg.start).days // 7
    return min(max(weeks, 0), cfg.week_count - 1)


def _unit(value: float, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    return min(1.0, max(0.0, (value - low) / (high - low)))


def encode_record(rec: DeliveryRecord, cfg: FeatureConfig) -> np.ndarray:
    """The 12-dimensional feature vector of one record, every entry in [0, 1]."""
    check_in_bbox(rec, cfg)
    lat_min, lat_max, lon_min, lon_max = cfg.bbox

    o_lat, o_lon = rec.o_lat, rec.o_lon
    if cfg.quantize_origin:
        o_lat, o_lon = quantize_coord(o_lat, cfg.quant_grid), quantize_coord(o_lon, cfg.quant_grid)
    d_lat = quantize_coord(rec.d_lat, cfg.quant_grid)
    d_lon = quantize_coord(rec.d_lon, cfg.quant_grid)

    t = rec.ofd_time
    week_span = cfg.week_count - 1
    return np.array([
        _unit(o_lon, (lon_min, lon_max)),
        _unit(o_lat, (lat_min, lat_max)),
        _unit(d_lon, (lon_min, lon_max)),
        _unit(d_lat, (lat_min, lat_max)),
        min(1.0, haversine(rec.o_lat, rec.o_lon, rec.d_lat, rec.d_lon) / bbox_diagonal_km(cfg)),
        (t.hour + t.minute / 60.0) / 24.0,
        t.weekday() / 6.0,
        week_index(t, cfg) / week_span if week_span > 0 else 0.0,
        _unit(rec.temp, cfg.temp_range),
        _unit(rec.rain, cfg.rain_range),
        _unit(rec.snow_precip, cfg.snow_precip_range),
        _unit(rec.snow_ground, cfg.snow_ground_range),
    ], dtype=np.float64)


def encode_records(records: Sequence[DeliveryRecord], cfg: FeatureConfig) -> np.ndarray:
    """Stack ``encode_record`` over a sequence into an (N, 12) matrix."""
    out = np.zeros((len(records), N_FEATURES))
    for i, rec in enumerate(records):
        out[i] = encode_record(rec, cfg)
    return out
