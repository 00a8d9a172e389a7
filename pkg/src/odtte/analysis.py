"""Error breakdowns and the frozen-trunk 2D projection.

Breakdowns split evaluated samples into disjoint bins along one axis (depot,
integer OD kilometers, scan hour, week, weekday, integer target hours) and
report per-bin metrics. Empty bins are omitted.

The projection trains a linear undercomplete autoencoder (F -> 2 -> F, no
biases) on mean-centered trunk outputs of a trained model. Its optimum spans
the leading two principal directions, so its reconstruction error is bounded
below by the rank-2 SVD residual.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .architectures import Model
from .autograd import Parameter, Tensor, backward, matmul, no_grad, square, sub, total, zero_grad
from .config import AutoencoderConfig, FeatureConfig
from .dataset import Dataset
from .early_stopping import EarlyStopping
from .errors import ContractError, NumericalError
from .featurization import DeliveryRecord, haversine, week_index
from .layers import glorot_uniform
from .logger import RunLogger, null_logger
from .metrics import compute_metrics
from .training import AdamState, adam_step

DIMENSIONS: Tuple[str, ...] = ("depot", "od_distance_km", "hour", "week", "dow", "target_hour")


@dataclass
class BreakdownRow:
    bin: object
    n: int
    mae: float
    mse: float
    mape: float
    mare: float
    abs_error_sum: float
    target_sum: float


@dataclass
class BreakdownTable:
    """Per-bin metrics along one dimension, bins in stable ascending order."""
    dimension: str
    rows: List[BreakdownRow] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.n for r in self.rows)

    def get(self, bin_key) -> Optional[BreakdownRow]:
        return next((r for r in self.rows if r.bin == bin_key), None)

    def to_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow((self.dimension, "n", "mae", "mse", "mape_pct", "mare_pct"))
            for r in self.rows:
                writer.writerow([r.bin, r.n, repr(r.mae), repr(r.mse),
                                 repr(r.mape * 100.0), repr(r.mare * 100.0)])


def _bin_of(rec: DeliveryRecord, target: float, dimension: str, cfg: FeatureConfig):
    if dimension == "depot":
        return rec.depot_id
    if dimension == "od_distance_km":
        return math.floor(haversine(rec.o_lat, rec.o_lon, rec.d_lat, rec.d_lon))
    if dimension == "hour":
        return rec.ofd_time.hour
    if dimension == "week":
        return week_index(rec.ofd_time, cfg)
    if dimension == "dow":
        return rec.ofd_time.weekday()
    return math.floor(target)


def error_breakdown(
    records: Sequence[DeliveryRecord],
    targets: Sequence[float],
    predictions: Sequence[float],
    dimension: str,
    cfg: Optional[FeatureConfig] = None,
) -> BreakdownTable:
    """Per-bin n, MAE, MSE, MAPE and MARE along ``dimension``."""
    if dimension not in DIMENSIONS:
        raise ContractError(f"unknown breakdown dimension {dimension!r}; choose from {DIMENSIONS}")
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    f = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if not len(records) == y.size == f.size:
        raise ContractError("records, targets and predictions must be aligned")
    cfg = cfg or FeatureConfig()

    members: Dict[object, List[int]] = {}
    for i, rec in enumerate(records):
        members.setdefault(_bin_of(rec, y[i], dimension, cfg), []).append(i)

    table = BreakdownTable(dimension)
    for key in sorted(members):
        idx = np.array(members[key])
        report = compute_metrics(y[idx], f[idx])
        table.rows.append(BreakdownRow(
            bin=key,
            n=report.n,
            mae=report.mae,
            mse=report.mse,
            mape=report.mape,
            mare=report.mare,
            abs_error_sum=float(np.abs(y[idx] - f[idx]).sum()),
            target_sum=float(y[idx].sum()),
        ))
    return table


DEPOT_MAP_COLUMNS = ("depot_id", "lat", "lon", "mape_pct", "n")


def depot_map_rows(
    table: BreakdownTable,
    locations: Dict[str, Tuple[float, float]],
    top: Optional[int] = None,
) -> List[Tuple[str, float, float, float, int]]:
    """Depot map rows, optionally only the ``top`` busiest depots, in id order."""
    if table.dimension != "depot":
        raise ContractError("the depot map needs a depot breakdown")
    rows = list(table.rows)
    if top is not None:
        if top < 1:
            raise ContractError("top must be >= 1")
        busiest = sorted(rows, key=lambda r: (-r.n, r.bin))[:top]
        keep = {r.bin for r in busiest}
        rows = [r for r in rows if r.bin in keep]
    out = []
    for r in rows:
        lat, lon = locations.get(r.bin, (math.nan, math.nan))
        out.append((r.bin, lat, lon, r.mape * 100.0, r.n))
    return out


def save_depot_map(path: Path, rows: Sequence[Tuple[str, float, float, float, int]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DEPOT_MAP_COLUMNS)
        for depot_id, lat, lon, mape_pct, n in rows:
            writer.writerow([depot_id, repr(lat), repr(lon), repr(mape_pct), n])


# ---------------------------------------------------------------------------
# Linear autoencoder projection
# ---------------------------------------------------------------------------

@dataclass
class LinearAutoencoder:
    """x -> (x - mean) E [+ b_e] -> codes D [+ b_d] + mean."""
    mean: np.ndarray
    encoder: np.ndarray
    decoder: np.ndarray
    encoder_bias: Optional[np.ndarray] = None
    decoder_bias: Optional[np.ndarray] = None
    recon_mse: float = math.nan
    epochs: int = 0

    def encode(self, x: np.ndarray) -> np.ndarray:
        codes = (np.asarray(x, dtype=np.float64) - self.mean) @ self.encoder
        return codes if self.encoder_bias is None else codes + self.encoder_bias

    def decode(self, codes: np.ndarray) -> np.ndarray:
        out = np.asarray(codes, dtype=np.float64) @ self.decoder
        if self.decoder_bias is not None:
            out = out + self.decoder_bias
        return out + self.mean


def svd_rank2_floor(x: np.ndarray) -> float:
    """Smallest achievable sum-of-squares reconstruction error per sample at rank 2."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return float(np.sum(s[2:] ** 2) / x.shape[0])


def _recon_loss(x: Tensor, params: List[Parameter], n: int) -> Tensor:
    codes = matmul(x, params[0])
    if len(params) == 4:
        codes = codes + params[2]
    recon = matmul(codes, params[1])
    if len(params) == 4:
        recon = recon + params[3]
    return total(square(sub(recon, x))) / n


def fit_linear_autoencoder(
    x: np.ndarray,
    cfg: AutoencoderConfig,
    logger: Optional[RunLogger] = None,
    n_components: int = 2,
) -> LinearAutoencoder:
    """Full-batch Adam on sum-of-squares reconstruction error per sample.

    The learning rate halves every ``lr_halving_period`` epochs and training
    stops after ``patience`` epochs without a strictly lower loss; the best
    weights are kept.
    """
    logger = logger or null_logger()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"autoencoder needs an (N >= 2, F) matrix, got {x.shape}")
    n, width = x.shape
    if width < n_components:
        raise ContractError(f"cannot project {width} features onto {n_components} components")

    mean = x.mean(axis=0)
    data = Tensor(x - mean)
    rng = np.random.default_rng(cfg.seed)
    params = [
        Parameter(glorot_uniform((width, n_components), width, n_components, rng), name="ae.encoder"),
        Parameter(glorot_uniform((n_components, width), n_components, width, rng), name="ae.decoder"),
    ]
    if cfg.use_bias:
        params += [Parameter(np.zeros(n_components), name="ae.encoder_bias"),
                   Parameter(np.zeros(width), name="ae.decoder_bias")]

    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    best = [p.value.copy() for p in params]
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        zero_grad(params)
        loss = _recon_loss(data, params, n)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"autoencoder loss became {value} in epoch {epoch}")
        if stopper.record(value):
            best = [p.value.copy() for p in params]
        if stopper.should_stop():
            break
        backward(loss)
        lr = cfg.lr * 0.5 ** ((epoch - 1) // cfg.lr_halving_period)
        adam_step(params, [p.grad for p in params], state, lr)

    for p, value in zip(params, best):
        p.value = value
    with no_grad():
        recon_mse = _recon_loss(data, params, n).item()
    logger.stats(f"autoencoder stopped after {epoch} epochs, reconstruction MSE {recon_mse:.6g}")

    return LinearAutoencoder(
        mean=mean,
        encoder=params[0].value.copy(),
        decoder=params[1].value.copy(),
        encoder_bias=params[2].value.copy() if cfg.use_bias else None,
        decoder_bias=params[3].value.copy() if cfg.use_bias else None,
        recon_mse=recon_mse,
        epochs=epoch,
    )


PROJECTION_COLUMNS = ("sample_id", "c1", "c2", "hour", "dow")


@dataclass
class Projection2D:
    """Encoded trunk outputs per sample with their scan hour and weekday."""
    sample_ids: np.ndarray
    codes: np.ndarray
    hours: np.ndarray
    dows: np.ndarray
    recon_mse: float
    svd_floor: float

    def centroids(self, by: str) -> List[Tuple[int, float, float, int]]:
        """(bin, mean c1, mean c2, n) per hour or dow bin, ascending."""
        if by not in ("hour", "dow"):
            raise ContractError(f"centroids are tracked by hour or dow, not {by!r}")
        keys = self.hours if by == "hour" else self.dows
        out = []
        for key in sorted(set(int(k) for k in keys)):
            members = self.codes[keys == key]
            c1, c2 = members.mean(axis=0)
            out.append((key, float(c1), float(c2), int(members.shape[0])))
        return out

    def to_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(PROJECTION_COLUMNS)
            for sid, (c1, c2), hour, dow in zip(self.sample_ids, self.codes, self.hours, self.dows):
                writer.writerow([int(sid), repr(float(c1)), repr(float(c2)), int(hour), int(dow)])

    def centroids_to_csv(self, path: Path, by: str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow((by, "c1", "c2", "n"))
            for key, c1, c2, n in self.centroids(by):
                writer.writerow([key, repr(c1), repr(c2), n])


def project_2d(
    model: Model,
    dataset: Dataset,
    feature_cfg: FeatureConfig,
    ae_cfg: AutoencoderConfig,
    logger: Optional[RunLogger] = None,
) -> Projection2D:
    """Encode the frozen trunk outputs of ``model`` over ``dataset`` into 2D."""
    trunk = model.trunk_features(dataset.features(feature_cfg))
    ae = fit_linear_autoencoder(trunk, ae_cfg, logger=logger)
    return Projection2D(
        sample_ids=dataset.ids.copy(),
        codes=ae.encode(trunk),
        hours=np.array([r.ofd_time.hour for r in dataset.records], dtype=np.int64),
        dows=np.array([r.ofd_time.weekday() for r in dataset.records], dtype=np.int64),
        recon_mse=ae.recon_mse,
        svd_floor=svd_rank2_floor(trunk),
    )
