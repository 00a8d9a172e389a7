import numpy as np
import pytest

from odtte.analysis import (
    DIMENSIONS,
    depot_map_rows,
    error_breakdown,
    fit_linear_autoencoder,
    project_2d,
    save_depot_map,
    svd_rank2_floor,
)
from odtte.architectures import build_model
from odtte.config import AutoencoderConfig, FeatureConfig
from odtte.errors import ContractError
from odtte.metrics import compute_metrics
from odtte.schema import ModelSpec


def _noisy_predictions(y, rng):
    return y + rng.normal(0.0, 0.5, y.size)


class TestBreakdown:
    def test_single_depot_matches_global(self, record_factory):
        records = [record_factory() for _ in range(4)]
        y = np.array([1.0, 2.0, 3.0, 4.0])
        f = np.array([1.5, 2.0, 2.0, 5.0])
        table = error_breakdown(records, y, f, "depot")
        assert len(table.rows) == 1
        assert table.rows[0].mape == compute_metrics(y, f).mape

    def test_two_bins_by_hand(self, record_factory):
        records = [record_factory(depot_id="A"), record_factory(depot_id="A"), record_factory(depot_id="B")]
        y = np.array([2.0, 4.0, 5.0])
        f = np.array([3.0, 4.0, 4.0])
        table = error_breakdown(records, y, f, "depot")
        a, b = table.get("A"), table.get("B")
        assert (a.n, b.n) == (2, 1)
        assert a.mape == pytest.approx((0.5 + 0.0) / 2)
        assert a.mare == pytest.approx(1.0 / 6.0)
        assert b.mape == pytest.approx(0.2) and b.mare == pytest.approx(0.2)
        assert a.mse == pytest.approx(0.5) and b.mae == pytest.approx(1.0)

    def test_unknown_dimension(self, record_factory):
        with pytest.raises(ContractError):
            error_breakdown([record_factory()], [1.0], [1.0], "weather")

    def test_bins_recombine_to_global(self, small_synthetic, rng):
        y = small_synthetic.targets()
        f = _noisy_predictions(y, rng)
        overall = compute_metrics(y, f)
        for dimension in DIMENSIONS:
            table = error_breakdown(small_synthetic.records, y, f, dimension, FeatureConfig())
            assert table.total == len(y)
            assert sum(r.n * r.mae for r in table.rows) / len(y) == pytest.approx(overall.mae, rel=1e-12)
            mare = sum(r.abs_error_sum for r in table.rows) / sum(r.target_sum for r in table.rows)
            assert mare == pytest.approx(overall.mare, rel=1e-12)

    def test_bins_are_sorted(self, small_synthetic, rng):
        y = small_synthetic.targets()
        table = error_breakdown(small_synthetic.records, y, _noisy_predictions(y, rng), "hour")
        hours = [r.bin for r in table.rows]
        assert hours == sorted(hours) and all(6 <= h <= 14 for h in hours)

    def test_csv_header(self, record_factory, tmp_path):
        table = error_breakdown([record_factory()], [2.0], [1.0], "dow")
        table.to_csv(tmp_path / "breakdown_dow.csv")
        lines = (tmp_path / "breakdown_dow.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "dow,n,mae,mse,mape_pct,mare_pct"
        assert lines[1].startswith("2,1,1.0,1.0,50.0,50.0")


class TestDepotMap:
    def test_top_depots(self, record_factory, tmp_path):
        records = ([record_factory(depot_id="D01")] * 3 + [record_factory(depot_id="D02")]
                   + [record_factory(depot_id="D03", o_lat=43.8)] * 2)
        y = np.full(6, 2.0)
        table = error_breakdown(records, y, y + 0.5, "depot")
        locations = {"D01": (43.7, -79.4), "D02": (43.7, -79.4), "D03": (43.8, -79.4)}
        rows = depot_map_rows(table, locations, top=2)
        assert [r[0] for r in rows] == ["D01", "D03"]
        assert rows[1][1] == 43.8 and rows[1][3] == pytest.approx(25.0)
        save_depot_map(tmp_path / "depot_map.csv", rows)
        assert (tmp_path / "depot_map.csv").read_text(encoding="utf-8").startswith("depot_id,lat,lon,mape_pct,n\n")

    def test_needs_depot_table(self, record_factory):
        table = error_breakdown([record_factory()], [2.0], [1.0], "hour")
        with pytest.raises(ContractError):
            depot_map_rows(table, {})


class TestAutoencoder:
    def test_rank_two_data_reconstructs_exactly(self, rng):
        x = rng.normal(size=(200, 2)) @ rng.normal(size=(2, 6))
        ae = fit_linear_autoencoder(x, AutoencoderConfig(seed=1))
        assert svd_rank2_floor(x) == pytest.approx(0.0, abs=1e-20)
        assert ae.recon_mse < 1e-3 * np.sum(x.var(axis=0))

    def test_reaches_rank_two_optimum(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        scales = np.array([5.0, 3.0, 0.5, 0.4, 0.3, 0.3, 0.2, 0.1])
        x = (rng.normal(size=(500, 8)) * scales) @ q.T + 2.0
        floor = svd_rank2_floor(x)
        ae = fit_linear_autoencoder(x, AutoencoderConfig(seed=2))
        assert floor <= ae.recon_mse * (1 + 1e-9)
        assert ae.recon_mse <= 1.05 * floor

    def test_decode_reproduces_fitted_loss(self, rng):
        x = rng.normal(size=(200, 2)) @ rng.normal(size=(2, 6)) + 1.5
        ae = fit_linear_autoencoder(x, AutoencoderConfig(seed=4, use_bias=True))
        recon = ae.decode(ae.encode(x))
        assert recon.shape == x.shape
        assert np.sum((recon - x) ** 2) / x.shape[0] == pytest.approx(ae.recon_mse, rel=1e-9, abs=1e-12)
        np.testing.assert_allclose(recon, x, atol=0.05 * np.abs(x).max())

    def test_same_seed_same_codes(self, rng):
        x = rng.normal(size=(50, 5))
        cfg = AutoencoderConfig(seed=3, max_epochs=200)
        a = fit_linear_autoencoder(x, cfg)
        b = fit_linear_autoencoder(x, cfg)
        np.testing.assert_array_equal(a.encode(x), b.encode(x))

    def test_needs_two_samples(self):
        with pytest.raises(ContractError):
            fit_linear_autoencoder(np.zeros((1, 4)), AutoencoderConfig())


class TestProjection:
    def test_projects_trunk_outputs(self, small_synthetic, tmp_path):
        data = small_synthetic.subset(range(60))
        model = build_model(ModelSpec("vgg", (2, 4), head_widths=(3,)), seed=0)
        projection = project_2d(model, data, FeatureConfig(), AutoencoderConfig(seed=0, max_epochs=300))
        assert projection.codes.shape == (60, 2)
        assert projection.svd_floor <= projection.recon_mse * (1 + 1e-9)
        centroids = projection.centroids("hour")
        assert sum(n for *_, n in centroids) == 60
        projection.to_csv(tmp_path / "projection.csv")
        projection.centroids_to_csv(tmp_path / "centroids_dow.csv", "dow")
        assert (tmp_path / "projection.csv").read_text(encoding="utf-8").startswith("sample_id,c1,c2,hour,dow\n")

    def test_centroids_by_unknown_key(self, small_synthetic):
        data = small_synthetic.subset(range(10))
        model = build_model(ModelSpec("resnet", (2,), head_widths=(2,)), seed=0)
        projection = project_2d(model, data, FeatureConfig(), AutoencoderConfig(max_epochs=20))
        with pytest.raises(ContractError):
            projection.centroids("week")
