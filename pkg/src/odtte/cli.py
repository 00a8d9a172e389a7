"""Batch command line for the OD-TTE lab.

    odtte gen-data    --n 10000 --seed 7 --out runs/data
    odtte train       --data runs/data/data.csv --preset resnet-8 --out runs/resnet8
    odtte evaluate    --predictions runs/resnet8/predictions.csv --out runs/eval
    odtte predict     --checkpoint runs/resnet8/model.ckpt --data runs/data/data.csv
    odtte baseline    --data runs/data/data.csv --method all --reference runs/resnet8/predictions.csv
    odtte analyze     --data runs/data/data.csv --predictions runs/resnet8/predictions.csv
    odtte project     --checkpoint runs/resnet8/model.ckpt --data runs/data/data.csv
    odtte depth-sweep --data runs/data/data.csv --family vgg

Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numerical failure.
Failures print one line on stderr:
    odtte-error code=<n> kind=<ErrorClass> message=<text>
"""

import argparse
import csv
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import DIMENSIONS, depot_map_rows, error_breakdown, project_2d, save_depot_map
from .architectures import (
    build_model,
    depth_summary,
    load_checkpoint,
    preset_spec,
    save_checkpoint,
)
from .baselines import build_index, mlp_spec, sbtte_predict_many
from .config import RunConfig, RunDir, derive_seed
from .dataset import Dataset, generate_synthetic, load_csv, save_csv, split
from .errors import ConfigurationError, ContractError, DivergenceError, OdtteError
from .logger import RunLogger
from .metrics import absolute_errors, evaluate, load_predictions, paired_ttest, save_predictions
from .run_recorder import RunRecorder
from .schema import ModelSpec
from .training import TrainResult, train

MLP_UNITS = 50


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to exit code 1."""

    def error(self, message: str):
        raise ConfigurationError(f"usage: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value configuration file")
    p.add_argument("--seed", type=int, help="Master seed (default: 0)")
    p.add_argument("--out", type=Path, help="Output directory (default: runs/<command>)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="Override any config key, e.g. --set train.batch_size=32")
    p.add_argument("--quiet", action="store_true", help="Log to run.log only")
    p.add_argument("--no-color", action="store_true", help="Disable colored output")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="vgg-N, resnet-N, se-vgg-N, se-resnet-N, mlp-1 or mlp-2")
    p.add_argument("--family", choices=["vgg", "resnet", "mlp"])
    p.add_argument("--depth", type=int, help="Blocks (3-10) or MLP hidden layers")
    p.add_argument("--se", action="store_true", help="Add squeeze-and-excitation units")
    p.add_argument("--head-widths", help="Comma-separated dense head widths (default: 50)")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, help="Initial learning rate (default: 1e-4)")
    p.add_argument("--epochs", type=int, help="Maximum epochs (default: 500)")
    p.add_argument("--batch-size", type=int, help="Mini-batch size (default: 64)")
    p.add_argument("--patience", type=int, help="Early-stopping patience (default: 25)")
    p.add_argument("--target-train-mse", type=float, help="Stop once training MSE drops below this")
    p.add_argument("--train-fraction", type=float, help="Training share of the split (default: 0.7)")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = _Parser(
        prog="odtte",
        description="Origin-destination travel-time estimation lab",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="Generate a synthetic delivery dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="Number of deliveries (default: 10000)")
    p.add_argument("--depots", type=int, help="Number of depots (default: 72)")
    p.add_argument("--weeks", type=int, help="Weeks covered (default: 25)")

    p = sub.add_parser("train", help="Train a model and write checkpoint and history")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="Dataset CSV")
    _add_model(p)
    _add_training(p)

    p = sub.add_parser("evaluate", help="Metrics from a predictions CSV or a checkpoint")
    _add_common(p)
    p.add_argument("--predictions", type=Path, help="Predictions CSV")
    p.add_argument("--checkpoint", type=Path, help="Model checkpoint (with --data)")
    p.add_argument("--data", type=Path, help="Dataset CSV; the held-out split is evaluated")
    p.add_argument("--coverage", type=float, default=0.9, help="Error-window coverage (default: 0.9)")
    p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("predict", help="Per-sample predictions from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--all", action="store_true", help="Predict every record, not only the held-out split")
    p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("baseline", help="SB-TTE and MLP benchmarks")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--method", choices=["sbtte", "mlp1", "mlp2", "all"], default="sbtte")
    p.add_argument("--reference", type=Path, help="Predictions CSV to t-test every baseline against")
    p.add_argument("--temporal-filter", action="store_true", help="SB-TTE: same day class and hour +-1")
    _add_training(p)

    p = sub.add_parser("analyze", help="Error breakdowns and the depot map")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--dimension", choices=list(DIMENSIONS) + ["all"], default="all")
    p.add_argument("--top-depots", type=int, help="Map only the K busiest depots")

    p = sub.add_parser("project", help="2D projection of frozen trunk outputs")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--limit", type=int, help="Use only the first N records")

    p = sub.add_parser("depth-sweep", help="Train one model per depth 3-10")
    _add_common(p)
    p.add_argument("--data", type=Path, help="Dataset CSV (not needed with --params-only)")
    p.add_argument("--family", choices=["vgg", "resnet"], default="vgg")
    p.add_argument("--depths", default="3-10", help="Depth range, e.g. 3-10 or 3,6,8")
    p.add_argument("--se", action="store_true", help="Also run the SE variant of every depth")
    p.add_argument("--params-only", action="store_true", help="Only build models and count parameters")
    p.add_argument("--head-widths")
    _add_training(p)

    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_FLAG_KEYS = {
    "seed": "seed",
    "n": "synthetic.n_samples",
    "depots": "synthetic.n_depots",
    "weeks": "weeks",
    "family": "family",
    "depth": "depth",
    "head_widths": "head_widths",
    "lr": "train.initial_lr",
    "epochs": "train.max_epochs",
    "batch_size": "train.batch_size",
    "patience": "train.patience",
    "target_train_mse": "train.target_train_mse",
    "train_fraction": "train_fraction",
}


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    """Config overrides from flags; --set pairs first, dedicated flags win."""
    pairs: Dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()

    preset = getattr(args, "preset", None)
    if preset:
        spec = preset_spec(preset)
        pairs["family"] = spec.family
        pairs["depth"] = str(len(spec.widths))
        pairs["se"] = "true" if spec.se else "false"

    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            pairs[key] = str(value)
    if getattr(args, "se", False) and args.command != "depth-sweep":
        pairs["se"] = "true"
    if getattr(args, "temporal_filter", False):
        pairs["sbtte.temporal_filter"] = "true"
    return pairs


def _derive_seeds(cfg: RunConfig) -> RunConfig:
    """Fill every component seed from the master seed."""
    return replace(
        cfg,
        synthetic=replace(cfg.synthetic, seed=derive_seed(cfg.seed, "data")),
        train=replace(cfg.train, seed=derive_seed(cfg.seed, "shuffle")),
        ae=replace(cfg.ae, seed=derive_seed(cfg.seed, "ae")),
    )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    return _derive_seeds(RunConfig.load(args.config, _overrides(args)))


def model_spec(cfg: RunConfig, family: Optional[str] = None, depth: Optional[int] = None,
               se: Optional[bool] = None) -> ModelSpec:
    family = family or cfg.family
    depth = cfg.depth if depth is None else depth
    if family == "mlp":
        if depth < 1:
            raise ConfigurationError("an MLP needs at least one hidden layer")
        return ModelSpec(family="mlp", widths=(MLP_UNITS,) * depth)
    return ModelSpec(
        family=family,
        widths=depth_summary(depth),
        se=cfg.se if se is None else se,
        se_ratio=cfg.se_ratio,
        se_bias=cfg.se_bias,
        head_widths=cfg.head_widths,
    )


# ---------------------------------------------------------------------------
# Shared steps
# ---------------------------------------------------------------------------

def _load_split(cfg: RunConfig, data: Path, logger: RunLogger) -> Tuple[Dataset, Dataset, Dataset]:
    dataset = load_csv(data, logger=logger)
    train_set, test_set = split(dataset, cfg.train_fraction, derive_seed(cfg.seed, "split"))
    logger.info(f"Loaded {len(dataset)} records from {data.name}: "
                f"{len(train_set)} train / {len(test_set)} held out")
    return dataset, train_set, test_set


def _xy(ds: Dataset, cfg: RunConfig) -> Tuple[np.ndarray, np.ndarray]:
    return ds.features(cfg.features), ds.targets()


def _fit(spec: ModelSpec, train_set: Dataset, test_set: Dataset, cfg: RunConfig,
         logger: RunLogger) -> TrainResult:
    model = build_model(spec, seed=derive_seed(cfg.seed, "init"))
    return train(model, _xy(train_set, cfg), _xy(test_set, cfg), cfg.train, logger=logger)


def _metrics_row(report) -> Dict[str, object]:
    return dict(report.to_report_dict())


def _write_rows(path: Path, columns: Sequence[str], rows: List[Dict[str, object]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_depths(text: str) -> List[int]:
    try:
        if "-" in text:
            low, high = (int(t) for t in text.split("-", 1))
            return list(range(low, high + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"bad depth range {text!r}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    logger.start_timer("generate")
    dataset = generate_synthetic(cfg.synthetic, logger=logger)
    save_csv(dataset, run_dir.data_csv)
    elapsed = logger.stop_timer("generate")
    recorder.record_timing("generate", elapsed)
    targets = dataset.targets()
    if len(dataset):
        logger.stats(f"durations: mean={targets.mean():.3f} h median={np.median(targets):.3f} h "
                     f"variance={targets.var():.3f}")
    logger.success(f"Wrote {len(dataset)} records to {run_dir.data_csv} "
                   f"({logger.format_duration(elapsed)})")
    return "completed"


def cmd_train(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    _, train_set, test_set = _load_split(cfg, args.data, logger)
    spec = model_spec(cfg)
    model = build_model(spec, seed=derive_seed(cfg.seed, "init"))
    try:
        result = train(model, _xy(train_set, cfg), _xy(test_set, cfg), cfg.train, logger=logger)
    except DivergenceError as e:
        save_checkpoint(model, run_dir.checkpoint)
        logger.warn(f"Diverged in epoch {e.epoch}; last good parameters saved to {run_dir.checkpoint}")
        raise

    save_checkpoint(result.model, run_dir.checkpoint)
    result.history.to_csv(run_dir.history_csv, include_seconds=cfg.train.record_wall_time)
    x_test, y_test = _xy(test_set, cfg)
    predictions = result.model.predict(x_test)
    save_predictions(run_dir.predictions_csv, test_set.ids, y_test, predictions)
    report = evaluate(y_test, predictions)
    report.save(run_dir.metrics_json)
    recorder.record_metrics(spec.name, _metrics_row(report))
    logger.success(f"{spec.name}: validation MSE {report.mse:.4f}, MAPE {report.mape * 100:.2f}%")
    return result.stop_reason


def cmd_evaluate(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    if args.predictions is not None:
        _, targets, predictions = load_predictions(args.predictions)
    elif args.checkpoint is not None and args.data is not None:
        model = load_checkpoint(args.checkpoint)
        _, _, test_set = _load_split(cfg, args.data, logger)
        x_test, targets = _xy(test_set, cfg)
        predictions = model.predict(x_test)
    else:
        raise ConfigurationError("evaluate needs --predictions, or --checkpoint with --data")
    report = evaluate(targets, predictions, args.coverage)
    report.save(run_dir.metrics_json)
    recorder.record_metrics("evaluate", _metrics_row(report))
    for key, value in report.to_report_dict().items():
        logger.stats(f"{key}: {value}")
    return "completed"


def cmd_predict(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    model = load_checkpoint(args.checkpoint)
    dataset, _, test_set = _load_split(cfg, args.data, logger)
    target_set = dataset if args.all else test_set
    x, y = _xy(target_set, cfg)
    save_predictions(run_dir.predictions_csv, target_set.ids, y, model.predict(x))
    logger.success(f"Wrote {len(target_set)} predictions to {run_dir.predictions_csv}")
    return "completed"


def _reference_errors(path: Path, test_set: Dataset) -> np.ndarray:
    ids, targets, predictions = load_predictions(path)
    by_id = {int(i): abs(t - p) for i, t, p in zip(ids, targets, predictions)}
    missing = [int(i) for i in test_set.ids if int(i) not in by_id]
    if missing:
        raise ContractError(f"reference predictions lack {len(missing)} held-out records (e.g. {missing[0]})")
    return np.array([by_id[int(i)] for i in test_set.ids])


BASELINE_COLUMNS = ("method", "mse", "rmse", "mae", "mape_pct", "mare_pct", "ew90_h", "n",
                    "t_vs_reference", "p_vs_reference")


def cmd_baseline(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    _, train_set, test_set = _load_split(cfg, args.data, logger)
    methods = ["sbtte", "mlp1", "mlp2"] if args.method == "all" else [args.method]
    reference = _reference_errors(args.reference, test_set) if args.reference else None
    y_test = test_set.targets()

    rows: List[Dict[str, object]] = []
    for method in methods:
        logger.separator()
        logger.start_timer(method)
        if method == "sbtte":
            index = build_index(train_set, cfg.sbtte.cell_size)
            predictions = sbtte_predict_many(index, test_set.records, cfg.sbtte)
        else:
            result = _fit(mlp_spec(method[:3] + "-" + method[3:]), train_set, test_set, cfg, logger)
            predictions = result.model.predict(test_set.features(cfg.features))
        recorder.record_timing(method, logger.stop_timer(method))

        save_predictions(run_dir.predictions_for(method), test_set.ids, y_test, predictions)
        report = evaluate(y_test, predictions)
        row: Dict[str, object] = {"method": method, **_metrics_row(report)}
        if reference is not None:
            test = paired_ttest(absolute_errors(y_test, predictions), reference)
            row["t_vs_reference"], row["p_vs_reference"] = test.t, test.p_value
            recorder.record_metrics(f"{method}_vs_reference", test.to_dict())
        rows.append(row)
        recorder.record_metrics(method, _metrics_row(report))
        logger.success(f"{method}: MSE {report.mse:.4f}, MAPE {report.mape * 100:.2f}%")

    _write_rows(run_dir.baselines_csv, BASELINE_COLUMNS, rows)
    return "completed"


def cmd_analyze(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    dataset = load_csv(args.data, logger=logger)
    ids, targets, predictions = load_predictions(args.predictions)
    if len(ids) and (ids.min() < 0 or ids.max() >= len(dataset)):
        raise ContractError(f"prediction record ids fall outside the {len(dataset)} dataset rows")
    records = [dataset[int(i)] for i in ids]

    dimensions = DIMENSIONS if args.dimension == "all" else (args.dimension,)
    for dimension in dimensions:
        table = error_breakdown(records, targets, predictions, dimension, cfg.features)
        table.to_csv(run_dir.breakdown_csv(dimension))
        logger.info(f"{dimension}: {len(table.rows)} bins")
        if dimension == "depot":
            rows = depot_map_rows(table, dataset.depot_locations(), top=args.top_depots)
            save_depot_map(run_dir.depot_map_csv, rows)
    logger.success(f"Breakdowns written to {run_dir.base}")
    return "completed"


def cmd_project(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    model = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data, logger=logger)
    if args.limit is not None:
        dataset = dataset.subset(range(min(args.limit, len(dataset))))
    if len(dataset) < 2:
        raise ContractError("projection needs at least 2 records")
    projection = project_2d(model, dataset, cfg.features, cfg.ae, logger=logger)
    projection.to_csv(run_dir.projection_csv)
    for by in ("hour", "dow"):
        projection.centroids_to_csv(run_dir.centroids_csv(by), by)
    recorder.record_metrics("projection", {"recon_mse": projection.recon_mse,
                                           "svd_floor": projection.svd_floor})
    logger.stats(f"reconstruction MSE {projection.recon_mse:.6g} (rank-2 floor {projection.svd_floor:.6g})")
    return "completed"


SWEEP_COLUMNS = ("model", "family", "depth", "se", "depth_summary", "pools", "params", "best_epoch",
                 "mse", "rmse", "mae", "mape_pct", "mare_pct", "ew90_h", "n")


def cmd_depth_sweep(args, cfg: RunConfig, run_dir: RunDir, logger: RunLogger, recorder: RunRecorder) -> str:
    depths = _parse_depths(args.depths)
    variants = [False, True] if args.se else [False]
    train_set = test_set = None
    if not args.params_only:
        if args.data is None:
            raise ConfigurationError("depth-sweep needs --data unless --params-only is given")
        _, train_set, test_set = _load_split(cfg, args.data, logger)
        y_test = test_set.targets()

    rows: List[Dict[str, object]] = []
    for depth in depths:
        for se in variants:
            spec = model_spec(cfg, family=args.family, depth=depth, se=se)
            logger.separator()
            row: Dict[str, object] = {
                "model": spec.name,
                "family": spec.family,
                "depth": depth,
                "se": "true" if se else "false",
                "depth_summary": "-".join(str(w) for w in spec.widths),
            }
            if args.params_only:
                model = build_model(spec, seed=derive_seed(cfg.seed, "init"))
            else:
                result = _fit(spec, train_set, test_set, cfg, logger)
                model = result.model
                report = evaluate(y_test, model.predict(test_set.features(cfg.features)))
                row.update(_metrics_row(report))
                row["best_epoch"] = result.best_epoch
                recorder.record_metrics(spec.name, _metrics_row(report))
            row["pools"] = len(model.pool_indices)
            row["params"] = model.count_params()
            logger.info(f"{spec.name}: {row['params']:,} parameters, {row['pools']} pools")
            rows.append(row)

    _write_rows(run_dir.sweep_csv, SWEEP_COLUMNS, rows)
    return "completed"


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "baseline": cmd_baseline,
    "analyze": cmd_analyze,
    "project": cmd_project,
    "depth-sweep": cmd_depth_sweep,
}


def _error_line(e: BaseException, code: int) -> str:
    message = " ".join(str(e).split())
    return f"odtte-error code={code} kind={type(e).__name__} message={message}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        cfg = resolve_config(args)
    except OdtteError as e:
        print(_error_line(e, e.exit_code), file=sys.stderr)
        return e.exit_code

    run_dir = RunDir(args.out or Path("runs") / args.command)
    run_dir.init()
    logger = RunLogger(log_file=run_dir.log_file, enable_colors=not args.no_color, quiet=args.quiet)
    logger.start_total_timer()
    if args.config is not None and not Path(args.config).exists():
        logger.warn(f"config file {args.config} not found; using defaults")
    recorder = RunRecorder(run_dir, args.command, logger)
    recorder.save_config(cfg)
    recorder.save_run_args(args)

    try:
        reason = COMMANDS[args.command](args, cfg, run_dir, logger, recorder)
        recorder.finalize(reason, 0)
        return 0
    except OdtteError as e:
        logger.error(str(e))
        print(_error_line(e, e.exit_code), file=sys.stderr)
        recorder.finalize(f"error: {type(e).__name__}", e.exit_code)
        return e.exit_code
    except Exception as e:
        logger.error(f"unexpected failure: {e}")
        traceback.print_exc()
        print(_error_line(e, 1), file=sys.stderr)
        recorder.finalize(f"error: {type(e).__name__}", 1)
        return 1
    finally:
        logger.close()


if __name__ == "__main__":
    sys.exit(main())
