"""Evaluation metrics, the error window and the paired t-test."""

import csv
import math
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ContractError, DomainError, ParseError
from .schema import MetricsReport, TTestResult


def _aligned(targets: Sequence[float], predictions: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    f = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if y.size != f.size:
        raise ContractError(f"{y.size} targets but {f.size} predictions")
    if y.size == 0:
        raise ContractError("metrics need at least one sample")
    return y, f


def compute_metrics(targets: Sequence[float], predictions: Sequence[float]) -> MetricsReport:
    """MSE, RMSE, MAE, MAPE and MARE (fractions). EW is left unset."""
    y, f = _aligned(targets, predictions)
    if np.any(y <= 0):
        raise DomainError("MAPE needs strictly positive targets")
    abs_err = np.abs(y - f)
    mse = float(np.mean((y - f) ** 2))
    return MetricsReport(
        mse=mse,
        rmse=math.sqrt(mse),
        mae=float(np.mean(abs_err)),
        mape=float(np.mean(abs_err / y)),
        mare=float(abs_err.sum() / y.sum()),
        n=int(y.size),
    )


def error_window(targets: Sequence[float], predictions: Sequence[float], p: float = 0.9) -> float:
    """Smallest band +-EW covering at least a fraction ``p`` of absolute errors.

    This is the k-th smallest absolute error for the smallest k with k / N >= p.
    """
    if not 0 < p <= 1:
        raise ContractError(f"coverage p must lie in (0, 1], got {p}")
    y, f = _aligned(targets, predictions)
    abs_err = np.sort(np.abs(y - f))
    coverage = np.arange(1, abs_err.size + 1) / abs_err.size
    # compare coverage fractions, not p * N, which can round above an integer
    k = int(np.searchsorted(coverage, p, side="left")) + 1
    return float(abs_err[k - 1])


def evaluate(targets: Sequence[float], predictions: Sequence[float], p: float = 0.9) -> MetricsReport:
    """compute_metrics plus the error window at coverage ``p``."""
    report = compute_metrics(targets, predictions)
    report.ew = error_window(targets, predictions, p)
    report.ew_p = p
    return report


def paired_ttest(errors_a: Sequence[float], errors_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-sample errors (a - b).

    Zero-variance differences give the degenerate result t=+-inf (0 when the
    mean difference is also 0), p=0, ``degenerate=True``.
    """
    a = np.asarray(errors_a, dtype=np.float64).reshape(-1)
    b = np.asarray(errors_b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ContractError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ContractError("paired t-test needs at least 2 pairs")

    diffs = a - b
    n = diffs.size
    df = n - 1
    mean_diff = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        t = math.copysign(math.inf, mean_diff) if mean_diff != 0 else 0.0
        return TTestResult(t=t, p_value=0.0, df=df, n=n, mean_diff=mean_diff, degenerate=True)

    t = mean_diff / (sd / math.sqrt(n))
    p_value = float(2.0 * stats.t.sf(abs(t), df))
    return TTestResult(t=float(t), p_value=p_value, df=df, n=n, mean_diff=mean_diff)


def absolute_errors(targets: Sequence[float], predictions: Sequence[float]) -> np.ndarray:
    y, f = _aligned(targets, predictions)
    return np.abs(y - f)


PREDICTION_COLUMNS = ("record_id", "target_h", "prediction_h")


def save_predictions(path: Path, record_ids: Sequence[int], targets: Sequence[float],
                     predictions: Sequence[float]) -> None:
    """Per-sample CSV shared by neural models and baselines."""
    if not len(record_ids) == len(targets) == len(predictions):
        raise ContractError("record ids, targets and predictions differ in length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for rid, y, p in zip(record_ids, targets, predictions):
            writer.writerow([int(rid), repr(float(y)), repr(float(p))])


def load_predictions(path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(record_ids, targets, predictions) from a predictions CSV."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    ids: List[int] = []
    ys: List[float] = []
    ps: List[float] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"missing column(s): {', '.join(missing)}", row=0)
        for row_num, row in enumerate(reader, start=1):
            try:
                ids.append(int(row["record_id"]))
                ys.append(float(row["target_h"]))
                ps.append(float(row["prediction_h"]))
            except (TypeError, ValueError):
                raise ParseError("malformed prediction row", row=row_num) from None
    return np.array(ids, dtype=np.int64), np.array(ys), np.array(ps)
