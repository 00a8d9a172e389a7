from datetime import datetime, timezone

import numpy as np
import pytest

from odtte.config import SyntheticConfig
from odtte.dataset import (
    CSV_COLUMNS,
    Dataset,
    build_world,
    format_timestamp,
    generate_synthetic,
    load_csv,
    parse_timestamp,
    save_csv,
    split,
)
from odtte.errors import CalibrationError, ContractError, ParseError
from odtte.logger import RunLogger

HEADER = ",".join(CSV_COLUMNS)


def _write(path, *rows):
    path.write_text("\n".join((HEADER,) + rows) + "\n", encoding="utf-8")
    return path


ROW = "D01,43.7,-79.4,43.72,-79.38,2017-01-04T09:30:00Z,2017-01-04T12:30:00Z,5.0,0.0,0.0,0.0"


class TestCSV:
    def test_round_trip(self, tmp_path, record_factory):
        ds = Dataset([record_factory(), record_factory(depot_id="D02", hours=1.25),
                      record_factory(d_lat=43.9, temp=-3.5, snow_ground=12.0)])
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        loaded = load_csv(path)
        assert loaded.records == ds.records
        np.testing.assert_array_equal(loaded.ids, [0, 1, 2])

    def test_timestamps_are_utc_with_z(self):
        t = datetime(2017, 1, 4, 9, 30, tzinfo=timezone.utc)
        assert format_timestamp(t) == "2017-01-04T09:30:00Z"
        assert parse_timestamp("2017-01-04T09:30:00Z") == t

    def test_empty_dataset_has_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        save_csv(generate_synthetic(SyntheticConfig(n_samples=0)), path)
        assert path.read_text(encoding="utf-8") == HEADER + "\n"
        assert len(load_csv(path)) == 0

    def test_nonpositive_duration_names_row(self, tmp_path):
        bad = ROW.replace("2017-01-04T12:30:00Z", "2017-01-04T09:30:00Z")
        with pytest.raises(ParseError) as info:
            load_csv(_write(tmp_path / "bad.csv", ROW, bad))
        assert info.value.row == 2
        assert str(info.value).startswith("row 2:")

    def test_malformed_timestamp(self, tmp_path):
        bad = ROW.replace("2017-01-04T09:30:00Z", "yesterday")
        with pytest.raises(ParseError) as info:
            load_csv(_write(tmp_path / "bad.csv", bad))
        assert info.value.row == 1

    def test_missing_column(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("depot_id,o_lat\nD01,43.7\n", encoding="utf-8")
        with pytest.raises(ParseError, match="missing column"):
            load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(tmp_path / "absent.csv")

    def test_unknown_column_is_ignored_with_warning(self, tmp_path):
        path = tmp_path / "extra.csv"
        path.write_text(HEADER + ",courier\n" + ROW + ",bob\n", encoding="utf-8")
        log_file = tmp_path / "run.log"
        logger = RunLogger(log_file=log_file, enable_colors=False, quiet=True)
        ds = load_csv(path, logger=logger)
        logger.close()
        assert len(ds) == 1
        assert ds[0].duration == pytest.approx(3.0)
        assert "[WARN]" in log_file.read_text(encoding="utf-8")
        assert "courier" in log_file.read_text(encoding="utf-8")

    def test_unknown_column_warns_through_default_logger(self, tmp_path, monkeypatch):
        path = tmp_path / "extra.csv"
        path.write_text(HEADER + ",courier\n" + ROW + ",bob\n", encoding="utf-8")
        log_file = tmp_path / "default.log"
        fallback = RunLogger(log_file=log_file, enable_colors=False, quiet=True)
        monkeypatch.setattr("odtte.dataset.null_logger", lambda: fallback)
        assert len(load_csv(path)) == 1
        fallback.close()
        assert "ignoring unknown column(s) courier" in log_file.read_text(encoding="utf-8")

    def test_load_does_not_touch_input(self, tmp_path):
        path = _write(tmp_path / "data.csv", ROW)
        before = path.read_bytes()
        load_csv(path)
        assert path.read_bytes() == before


class TestSplit:
    def test_seventy_thirty(self, record_factory):
        train, test = split(Dataset([record_factory() for _ in range(10)]), 0.7, seed=1)
        assert (len(train), len(test)) == (7, 3)
        assert sorted(np.concatenate([train.ids, test.ids])) == list(range(10))

    def test_floor_rule(self, record_factory):
        train, test = split(Dataset([record_factory() for _ in range(101)]), 0.5, seed=1)
        assert (len(train), len(test)) == (50, 51)

    def test_same_seed_same_membership(self, record_factory):
        ds = Dataset([record_factory() for _ in range(50)])
        a, _ = split(ds, 0.7, seed=3)
        b, _ = split(ds, 0.7, seed=3)
        np.testing.assert_array_equal(a.ids, b.ids)

    def test_empty(self):
        with pytest.raises(ContractError):
            split(Dataset(), 0.7)


class TestGenerator:
    def test_same_seed_gives_identical_files(self, tmp_path):
        cfg = SyntheticConfig(n_samples=300, seed=7)
        save_csv(generate_synthetic(cfg), tmp_path / "a.csv")
        save_csv(generate_synthetic(cfg), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_different_seed_differs(self):
        a = generate_synthetic(SyntheticConfig(n_samples=50, seed=1))
        b = generate_synthetic(SyntheticConfig(n_samples=50, seed=2))
        assert a.records != b.records

    def test_thread_count_does_not_change_output(self, monkeypatch):
        cfg = SyntheticConfig(n_samples=350, shard_size=100, seed=5)
        monkeypatch.setenv("ODTTE_THREADS", "1")
        serial = generate_synthetic(cfg)
        monkeypatch.setenv("ODTTE_THREADS", "4")
        parallel = generate_synthetic(cfg)
        assert serial.records == parallel.records

    def test_records_are_valid(self, small_synthetic):
        cfg = SyntheticConfig()
        lat_min, lat_max, lon_min, lon_max = cfg.bbox
        y = small_synthetic.targets()
        assert np.all(y >= cfg.min_hours - 1e-9) and np.all(y <= cfg.max_hours + 1e-9)
        for r in small_synthetic:
            assert lat_min <= r.d_lat <= lat_max and lon_min <= r.d_lon <= lon_max
            assert 6 <= r.ofd_time.hour <= 14

    def test_provenance_survives_csv(self, tmp_path, small_synthetic):
        path = tmp_path / "data.csv"
        save_csv(small_synthetic, path)
        meta = load_csv(path).provenance
        assert meta["source"] == "synthetic"
        assert meta["seed"] == "11"

    def test_weekends_are_faster_than_weekdays(self):
        data = generate_synthetic(SyntheticConfig(n_samples=20_000, seed=2017))
        y = data.targets()
        weekend = np.array([r.ofd_time.weekday() >= 5 for r in data])
        assert weekend.any() and not weekend.all()
        assert y[weekend].mean() < y[~weekend].mean()

    def test_unreachable_variance_is_a_calibration_error(self):
        cfg = SyntheticConfig(target_variance=0.01, target_mean=3.19, target_median=3.1)
        with pytest.raises(CalibrationError):
            build_world(cfg, np.random.default_rng(0))

    @pytest.mark.slow
    def test_calibrated_moments_at_scale(self):
        y = generate_synthetic(SyntheticConfig(n_samples=100_000, seed=2017)).targets()
        assert abs(y.mean() - 3.19) <= 0.15
        assert abs(np.median(y) - 2.96) <= 0.15
        assert abs(y.var() - 2.88) <= 0.30
