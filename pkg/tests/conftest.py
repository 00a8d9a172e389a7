"""Shared fixtures for the odtte test suite."""

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from odtte.config import FeatureConfig, SyntheticConfig
from odtte.dataset import Dataset, generate_synthetic
from odtte.featurization import DeliveryRecord


def make_record(
    depot_id: str = "D01",
    o_lat: float = 43.70,
    o_lon: float = -79.40,
    d_lat: float = 43.72,
    d_lon: float = -79.38,
    ofd: datetime = datetime(2017, 1, 4, 9, 30, tzinfo=timezone.utc),
    hours: float = 3.0,
    temp: float = 5.0,
    rain: float = 0.0,
    snow_precip: float = 0.0,
    snow_ground: float = 0.0,
) -> DeliveryRecord:
    return DeliveryRecord(
        depot_id=depot_id,
        o_lat=o_lat,
        o_lon=o_lon,
        d_lat=d_lat,
        d_lon=d_lon,
        ofd_time=ofd,
        delivered_time=ofd + timedelta(hours=hours),
        temp=temp,
        rain=rain,
        snow_precip=snow_precip,
        snow_ground=snow_ground,
    )


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def feature_cfg() -> FeatureConfig:
    return FeatureConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synthetic() -> Dataset:
    """A 600-record synthetic dataset shared by the read-only tests."""
    return generate_synthetic(SyntheticConfig(n_samples=600, seed=11, n_delivery_points=300))


@pytest.fixture
def tmp_run(tmp_path: Path) -> Path:
    out = tmp_path / "run"
    out.mkdir()
    return out
