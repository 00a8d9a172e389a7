import math
from datetime import datetime, timezone

import numpy as np
import pytest

from odtte.config import FeatureConfig
from odtte.errors import ContractError, DomainError, FeatureRangeError
from odtte.featurization import (
    FEATURE_ORDER,
    N_FEATURES,
    bbox_diagonal_km,
    encode_record,
    encode_records,
    haversine,
    haversine_np,
    quantize_coord,
    week_index,
)


class TestHaversine:
    def test_identical_points(self):
        assert haversine(43.7, -79.4, 43.7, -79.4) == 0.0

    def test_antipodal_on_equator(self):
        assert haversine(0, 0, 0, 180) == pytest.approx(math.pi * 6371.0, rel=1e-12)

    def test_one_degree_on_equator(self):
        assert haversine(0, 0, 0, 1) == pytest.approx(2 * math.pi * 6371.0 / 360, rel=1e-12)
        assert haversine(0, 0, 0, 1) == pytest.approx(111.19, abs=0.01)

    def test_latitude_out_of_range(self):
        with pytest.raises(DomainError):
            haversine(91, 0, 0, 0)

    def test_vectorized_agrees(self, rng):
        lat1, lat2 = rng.uniform(-80, 80, 20), rng.uniform(-80, 80, 20)
        lon1, lon2 = rng.uniform(-180, 180, 20), rng.uniform(-180, 180, 20)
        scalar = [haversine(*args) for args in zip(lat1, lon1, lat2, lon2)]
        np.testing.assert_allclose(haversine_np(lat1, lon1, lat2, lon2), scalar, rtol=1e-12)


class TestQuantize:
    def test_rounds_to_grid(self):
        assert quantize_coord(43.6532, 0.001) == 43.653
        assert quantize_coord(-79.38345, 0.001) == -79.383

    def test_multiples_unchanged(self):
        for value in (43.653, -79.383, 0.0, 1.5):
            assert quantize_coord(value, 0.001) == value

    def test_bad_grid(self):
        with pytest.raises(ContractError):
            quantize_coord(1.0, 0.0)


class TestEncode:
    def test_feature_order_is_fixed(self):
        assert N_FEATURES == 12
        assert FEATURE_ORDER[:5] == ("o_lon_n", "o_lat_n", "d_lon_n", "d_lat_n", "dist_n")

    def test_south_west_corner_at_monday_midnight_is_all_zero(self, record_factory, feature_cfg):
        lat_min, _, lon_min, _ = feature_cfg.bbox
        rec = record_factory(
            o_lat=lat_min, o_lon=lon_min, d_lat=lat_min, d_lon=lon_min,
            ofd=datetime(2017, 1, 2, 0, 0, tzinfo=timezone.utc),
            temp=-10.0, rain=0.0, snow_precip=0.0, snow_ground=0.0,
        )
        np.testing.assert_array_equal(encode_record(rec, feature_cfg), np.zeros(12))

    def test_diagonal_trip_has_unit_distance(self, record_factory, feature_cfg):
        lat_min, lat_max, lon_min, lon_max = feature_cfg.bbox
        rec = record_factory(o_lat=lat_min, o_lon=lon_min, d_lat=lat_max, d_lon=lon_max,
                             ofd=datetime(2017, 1, 8, 23, 59, tzinfo=timezone.utc))
        v = encode_record(rec, feature_cfg)
        assert v[4] == pytest.approx(1.0)
        assert v[2] == pytest.approx(1.0) and v[3] == pytest.approx(1.0)
        assert v[6] == 1.0  # Sunday

    def test_mid_range_record(self, record_factory, feature_cfg):
        rec = record_factory(
            o_lat=43.75, o_lon=-79.50, d_lat=43.8004, d_lon=-79.4003,
            ofd=datetime(2017, 1, 18, 9, 30, tzinfo=timezone.utc),
            temp=10.0, rain=10.0, snow_precip=4.0, snow_ground=25.0,
        )
        v = encode_record(rec, feature_cfg)
        expected = [
            (-79.50 + 80.10) / 1.2,
            (43.75 - 43.40) / 0.7,
            (-79.400 + 80.10) / 1.2,
            (43.800 - 43.40) / 0.7,
            haversine(43.75, -79.50, 43.8004, -79.4003) / bbox_diagonal_km(feature_cfg),
            9.5 / 24,
            2 / 6,
            2 / 24,
            0.5,
            0.25,
            0.25,
            0.5,
        ]
        np.testing.assert_allclose(v, expected, rtol=1e-9, atol=1e-12)

    def test_weather_is_clamped(self, record_factory, feature_cfg):
        v = encode_record(record_factory(temp=-40.0, rain=500.0), feature_cfg)
        assert v[8] == 0.0 and v[9] == 1.0

    def test_outside_bbox_names_field(self, record_factory, feature_cfg):
        with pytest.raises(FeatureRangeError) as info:
            encode_record(record_factory(d_lon=-75.0), feature_cfg)
        assert info.value.field == "d_lon"

    def test_every_entry_in_unit_interval(self, small_synthetic, feature_cfg):
        x = encode_records(small_synthetic.records, feature_cfg)
        assert x.shape == (len(small_synthetic), 12)
        assert x.min() >= 0.0 and x.max() <= 1.0

    def test_week_index_is_clamped(self, feature_cfg):
        assert week_index(datetime(2016, 12, 1, tzinfo=timezone.utc), feature_cfg) == 0
        assert week_index(datetime(2018, 1, 1, tzinfo=timezone.utc), feature_cfg) == 24
        cfg = FeatureConfig(week_count=1)
        assert week_index(datetime(2017, 3, 1, tzinfo=timezone.utc), cfg) == 0
