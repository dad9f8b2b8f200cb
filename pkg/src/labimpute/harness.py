"""Repeated-measurement experiment harness.

An experiment sweeps missing-data rates over repeated train/test splits and
runs a configured set of methods on every (rate, repetition) cell.  All
randomness descends from one master seed through named child streams, so a
given config produces byte-identical result tables no matter how many worker
threads execute it or in what order the cells finish.

Pairing discipline: within one repetition every method sees the same split
and the same missingness pattern, and methods that train a downstream forest
share one per-cell classifier stream.  Masks depend on the (repetition, rate)
pair only, never on the method list, so adding a method to a config does not
disturb the numbers of the others.

Classification methods work on the train/test pair scaled against observed
training cells.  The imputation-error methods impute the pooled matrix (train
rows plus test rows, labels stacked in for the label-using variant) scaled
against its own observed cells, and score masked cells per unit of column
range so the error is comparable across datasets.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ._rng import child_seed
from .data import (
    DataTable,
    LabelKind,
    LabelVector,
    MissingMask,
    accuracy,
    apply_mcar,
    concat_rows,
    load_csv,
    masked_mse,
    scale_minmax,
    split_label,
    train_test_split,
)
from .errors import DataError
from .forest import ForestParams, fit_forest, predict, predict_with_missing
from .imputers import MiceParams, MissForestParams
from .strategies import (
    Scenario,
    cbmi_predict,
    di_impute,
    iclf_predict,
    iul_impute,
    rf_missing_predict,
)

_REP_TAG = 565601

# Config-level method names.  The two head-to-head entries expand into a pair
# of result rows sharing one preparation but carrying independent seeds.
_EXPANSION = {
    "cbmi": ("cbmi",),
    "iclf-missforest": ("iclf-missforest",),
    "iclf-mice": ("iclf-mice",),
    "rf-missing": ("rf-missing",),
    "iul-vs-di-missforest": ("iul-missforest", "di-missforest"),
    "iul-vs-di-mice": ("iul-mice", "di-mice"),
}

_CLASSIFICATION_METHODS = {"cbmi", "iclf-missforest", "iclf-mice", "rf-missing"}

_BUILTIN_PREFIX = "builtin:"
_BUILTIN_DATASETS = {"iris": ("iris.csv", "species")}


def _rate_key(rate: float) -> int:
    # stable integer identity for a rate, immune to float formatting
    return int(round(rate * 1_000_000))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment end to end."""

    dataset: str
    label: str
    scenario: Scenario = Scenario.TEST_MISSING
    rates: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    repetitions: int = 10
    methods: tuple[str, ...] = ("cbmi",)
    seed: int = 0
    train_ratio: float = 0.6
    forest: ForestParams = field(default_factory=ForestParams)
    missforest_max_iter: int = 10
    mice_n_iter: int = 10
    mice_ridge: float = 1e-8

    def __post_init__(self):
        if not self.dataset:
            raise DataError("dataset must be a CSV path or builtin:<name>")
        if not self.label:
            raise DataError("label column name must be non-empty")
        if not self.rates:
            raise DataError("rates must be non-empty")
        for r in self.rates:
            if not (0.0 <= float(r) < 1.0):
                raise DataError(f"rate {r} outside [0, 1)")
        if len(set(self._rate_keys())) != len(self.rates):
            raise DataError("duplicate rates in config")
        if self.repetitions < 1:
            raise DataError("repetitions must be >= 1")
        if not self.methods:
            raise DataError("methods must be non-empty")
        for m in self.methods:
            if m not in _EXPANSION:
                known = ", ".join(sorted(_EXPANSION))
                raise DataError(f"unknown method {m!r}; known methods: {known}")
        if len(set(self.methods)) != len(self.methods):
            raise DataError("duplicate methods in config")
        if not (0.0 < self.train_ratio < 1.0):
            raise DataError("train_ratio must be in (0, 1)")
        if self.missforest_max_iter < 1:
            raise DataError("missforest_max_iter must be >= 1")
        if self.mice_n_iter < 1:
            raise DataError("mice_n_iter must be >= 1")
        if self.mice_ridge < 0:
            raise DataError("mice_ridge must be >= 0")

    def _rate_keys(self) -> list[int]:
        return [_rate_key(float(r)) for r in self.rates]

    def record_methods(self) -> tuple[str, ...]:
        out: list[str] = []
        for m in self.methods:
            out.extend(_EXPANSION[m])
        return tuple(out)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "label": self.label,
            "scenario": self.scenario.value,
            "rates": [float(r) for r in self.rates],
            "repetitions": self.repetitions,
            "methods": list(self.methods),
            "seed": self.seed,
            "train_ratio": self.train_ratio,
            "forest": {
                "n_trees": self.forest.n_trees,
                "mtry": self.forest.mtry,
                "min_leaf": self.forest.min_leaf,
                "max_depth": self.forest.max_depth,
                "bootstrap": self.forest.bootstrap,
            },
            "missforest": {"max_iter": self.missforest_max_iter},
            "mice": {"n_iter": self.mice_n_iter, "ridge": self.mice_ridge},
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise DataError("experiment config must be a JSON object")
        known = {
            "dataset", "label", "scenario", "rates", "repetitions",
            "methods", "seed", "train_ratio", "forest", "missforest", "mice",
        }
        extra = set(raw) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        for req in ("dataset", "label"):
            if req not in raw:
                raise DataError(f"config missing required key {req!r}")
        kwargs: dict = {"dataset": raw["dataset"], "label": raw["label"]}
        if "scenario" in raw:
            try:
                kwargs["scenario"] = Scenario(raw["scenario"])
            except ValueError:
                vals = ", ".join(s.value for s in Scenario)
                raise DataError(f"scenario must be one of: {vals}") from None
        if "rates" in raw:
            kwargs["rates"] = tuple(float(r) for r in raw["rates"])
        elif kwargs.get("scenario") is Scenario.TEST_OBSERVED:
            # an untouched test side makes the zero-rate point meaningful
            kwargs["rates"] = (0.0, 0.2, 0.4, 0.6, 0.8)
        if "repetitions" in raw:
            kwargs["repetitions"] = int(raw["repetitions"])
        if "methods" in raw:
            kwargs["methods"] = tuple(raw["methods"])
        if "seed" in raw:
            kwargs["seed"] = int(raw["seed"])
        if "train_ratio" in raw:
            kwargs["train_ratio"] = float(raw["train_ratio"])
        if "forest" in raw:
            f = dict(raw["forest"])
            extra = set(f) - {"n_trees", "mtry", "min_leaf", "max_depth", "bootstrap"}
            if extra:
                raise DataError(f"unknown forest config keys: {sorted(extra)}")
            kwargs["forest"] = ForestParams(**f)
        if "missforest" in raw:
            mf = dict(raw["missforest"])
            extra = set(mf) - {"max_iter"}
            if extra:
                raise DataError(f"unknown missforest config keys: {sorted(extra)}")
            if "max_iter" in mf:
                kwargs["missforest_max_iter"] = int(mf["max_iter"])
        if "mice" in raw:
            mc = dict(raw["mice"])
            extra = set(mc) - {"n_iter", "ridge"}
            if extra:
                raise DataError(f"unknown mice config keys: {sorted(extra)}")
            if "n_iter" in mc:
                kwargs["mice_n_iter"] = int(mc["n_iter"])
            if "ridge" in mc:
                kwargs["mice_ridge"] = float(mc["ridge"])
        return cls(**kwargs)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_json_dict(raw)


def save_experiment_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )


def resolve_dataset(name: str) -> tuple[DataTable, str]:
    """Load the configured dataset, returning (table, default label column)."""
    if name.startswith(_BUILTIN_PREFIX):
        key = name[len(_BUILTIN_PREFIX):]
        if key not in _BUILTIN_DATASETS:
            known = ", ".join(sorted(_BUILTIN_DATASETS))
            raise DataError(f"unknown builtin dataset {key!r}; known: {known}")
        fname, label = _BUILTIN_DATASETS[key]
        ref = resources.files("labimpute") / "_assets" / fname
        with resources.as_file(ref) as p:
            return load_csv(p), label
    p = Path(name)
    if not p.is_file():
        raise DataError(f"dataset file not found: {p}")
    return load_csv(p), ""


@dataclass(frozen=True)
class RunRecord:
    """Result of one method on one (rate, repetition) cell.

    masked_mse is the squared imputation error per unit of column range,
    averaged over the cell's scored coordinates (masked_cells of them).
    """

    dataset: str
    method: str
    scenario: str
    rate: float
    repetition: int
    seed: int
    masked_mse: float | None
    masked_cells: int | None
    accuracy: float | None
    downstream_mse: float | None
    status: str
    error: str
    wall_time_seconds: float


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    scenario: str
    method: str
    rate: float
    metric: str
    mean: float
    sd: float
    n: int


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    records: tuple[RunRecord, ...]
    aggregates: tuple[AggregateRow, ...]


# The scaled span is 2, so dividing squared errors by its square reports
# imputation error per unit of column range, comparable across datasets.
_RANGE_SQ = 4.0


@dataclass(frozen=True)
class _CellPrep:
    """Shared inputs every method sees for one (rate, repetition) cell.

    Classification methods consume the train/test pair.  The imputation-error
    methods consume the pooled matrix (train rows first, then test rows) plus
    the pre-mask truth in the same scaled space and the cells to score on.
    """

    x_train: DataTable          # masked, scaled
    y_train: LabelVector
    x_test: DataTable           # scenario-dependent missingness, scaled
    y_test: LabelVector
    x_pool: DataTable           # masked train rows + test rows, scaled
    x_pool_reference: DataTable
    y_pool: LabelVector
    pool_eval_mask: MissingMask
    n_train: int


def _concat_labels(a: LabelVector, b: LabelVector) -> LabelVector:
    return LabelVector(
        a.kind,
        np.concatenate([a.values, b.values]),
        np.concatenate([a.missing, b.missing]),
        categories=a.categories,
        name=a.name,
    )


def _offset_mask(mask: MissingMask, row_offset: int, n_rows: int) -> MissingMask:
    return MissingMask(
        n_rows=n_rows,
        n_cols=mask.n_cols,
        rows=mask.rows + row_offset,
        cols=mask.cols,
    )


def _prepare_cell(
    x: DataTable,
    y: LabelVector,
    config: ExperimentConfig,
    rep_seed: int,
    rate: float,
) -> _CellPrep:
    split_seed = child_seed(rep_seed, 1)
    (x_tr, y_tr), (x_te, y_te) = train_test_split(x, y, config.train_ratio, split_seed)
    rk = _rate_key(rate)
    x_tr_masked, train_mask = apply_mcar(x_tr, rate, child_seed(rep_seed, 2, rk))
    if config.scenario is Scenario.TEST_MISSING:
        x_te_used, test_mask = apply_mcar(x_te, rate, child_seed(rep_seed, 3, rk))
    else:
        x_te_used, test_mask = x_te, None
    scaled, _ = scale_minmax(x_tr_masked, [x_tr_masked, x_te_used])

    pool = concat_rows(x_tr_masked, x_te_used)
    pool_ref = concat_rows(x_tr, x_te)
    pool_scaled, _ = scale_minmax(pool, [pool, pool_ref])
    if test_mask is not None:
        # score where held-back truth exists on the test side (the paired
        # test mask), so the error is read off rows the classifiers predict
        eval_mask = _offset_mask(test_mask, x_tr.n_rows, pool.n_rows)
    else:
        eval_mask = _offset_mask(train_mask, 0, pool.n_rows)
    return _CellPrep(
        x_train=scaled[0],
        y_train=y_tr,
        x_test=scaled[1],
        y_test=y_te,
        x_pool=pool_scaled[0],
        x_pool_reference=pool_scaled[1],
        y_pool=_concat_labels(y_tr, y_te),
        pool_eval_mask=eval_mask,
        n_train=x_tr.n_rows,
    )


def _imputer_params(config: ExperimentConfig, engine: str, seed: int):
    if engine == "missforest":
        return MissForestParams(
            forest=config.forest, max_iter=config.missforest_max_iter, seed=seed
        )
    return MiceParams(n_iter=config.mice_n_iter, ridge=config.mice_ridge)


def _downstream_mse(
    x_imp_pool: DataTable,
    prep: _CellPrep,
    config: ExperimentConfig,
    seed: int,
) -> float | None:
    """Test-set regression error of a forest trained on the imputed features.

    Train and test rows come out of the same completed pool, so the test
    side needs no missing-value routing.
    """
    if prep.y_train.kind is not LabelKind.REGRESSION:
        return None
    idx = np.arange(x_imp_pool.n_rows)
    model = fit_forest(
        x_imp_pool.take_rows(idx[:prep.n_train]), prep.y_train, config.forest, seed
    )
    pred = predict(model, x_imp_pool.take_rows(idx[prep.n_train:]))
    diff = pred.values - prep.y_test.values
    return float(diff @ diff / diff.size)


def _run_one_method(
    method: str,
    prep: _CellPrep,
    config: ExperimentConfig,
    seed: int,
    clf_seed: int,
) -> dict:
    """Execute one result-row method; returns the metric fields for its record.

    seed drives the method's own imputation randomness.  clf_seed drives any
    downstream forest and is shared by every method of the cell, so paired
    methods differ only through the data they hand that forest.
    """
    out: dict = {
        "masked_mse": None,
        "masked_cells": None,
        "accuracy": None,
        "downstream_mse": None,
    }
    if method == "cbmi":
        params = _imputer_params(config, "missforest", child_seed(seed, 1))
        res = cbmi_predict(prep.x_train, prep.y_train, prep.x_test, params)
        out["accuracy"] = accuracy(res.y_pred, prep.y_test)
    elif method in ("iclf-missforest", "iclf-mice"):
        engine = method.removeprefix("iclf-")
        params = _imputer_params(config, engine, child_seed(seed, 1))
        pred = iclf_predict(
            prep.x_train,
            prep.y_train,
            prep.x_test,
            params,
            config.forest,
            config.scenario,
            clf_seed,
        )
        out["accuracy"] = accuracy(pred, prep.y_test)
    elif method == "rf-missing":
        pred = rf_missing_predict(
            prep.x_train, prep.y_train, prep.x_test, config.forest, clf_seed
        )
        out["accuracy"] = accuracy(pred, prep.y_test)
    elif method in ("iul-missforest", "iul-mice"):
        engine = method.removeprefix("iul-")
        params = _imputer_params(config, engine, child_seed(seed, 1))
        x_imp, _ = iul_impute(prep.x_pool, prep.y_pool, params)
        err = masked_mse(x_imp, prep.x_pool_reference, prep.pool_eval_mask)
        out["masked_mse"] = err.value / _RANGE_SQ
        out["masked_cells"] = err.n_cells
        out["downstream_mse"] = _downstream_mse(x_imp, prep, config, clf_seed)
    elif method in ("di-missforest", "di-mice"):
        engine = method.removeprefix("di-")
        params = _imputer_params(config, engine, child_seed(seed, 1))
        x_imp = di_impute(prep.x_pool, params)
        err = masked_mse(x_imp, prep.x_pool_reference, prep.pool_eval_mask)
        out["masked_mse"] = err.value / _RANGE_SQ
        out["masked_cells"] = err.n_cells
        out["downstream_mse"] = _downstream_mse(x_imp, prep, config, clf_seed)
    else:
        raise DataError(f"unknown result method {method!r}")
    return out


def _run_cell(
    x: DataTable,
    y: LabelVector,
    config: ExperimentConfig,
    rate: float,
    rep: int,
) -> list[RunRecord]:
    rep_seed = child_seed(config.seed, _REP_TAG, rep)
    rk = _rate_key(rate)
    common = {
        "dataset": config.dataset,
        "scenario": config.scenario.value,
        "rate": rate,
        "repetition": rep,
    }
    methods = config.record_methods()
    seeds = {m: child_seed(rep_seed, 4, rk, m) for m in methods}
    clf_seed = child_seed(rep_seed, 5, rk)
    try:
        prep = _prepare_cell(x, y, config, rep_seed, rate)
    except DataError as exc:
        # one shared failure fails every method of the cell the same way
        return [
            RunRecord(
                method=m, seed=seeds[m], masked_mse=None, masked_cells=None,
                accuracy=None, downstream_mse=None, status="error",
                error=str(exc), wall_time_seconds=0.0, **common,
            )
            for m in methods
        ]
    records = []
    for m in methods:
        t0 = time.perf_counter()
        try:
            metrics = _run_one_method(m, prep, config, seeds[m], clf_seed)
            status, error = "ok", ""
        except DataError as exc:
            metrics = {
                "masked_mse": None, "masked_cells": None,
                "accuracy": None, "downstream_mse": None,
            }
            status, error = "error", str(exc)
        wall = time.perf_counter() - t0
        records.append(
            RunRecord(
                method=m, seed=seeds[m], status=status, error=error,
                wall_time_seconds=wall, **common, **metrics,
            )
        )
    return records


def _aggregate(config: ExperimentConfig, records: tuple[RunRecord, ...]):
    """Mean and sample sd per (method, rate, metric) over successful runs."""
    groups: dict[tuple[str, float, str], list[float]] = {}
    for rec in records:
        if rec.status != "ok":
            continue
        for metric in ("masked_mse", "accuracy", "downstream_mse"):
            v = getattr(rec, metric)
            if v is not None:
                groups.setdefault((rec.method, rec.rate, metric), []).append(v)
    rows = []
    for method in config.record_methods():
        for rate in config.rates:
            for metric in ("masked_mse", "accuracy", "downstream_mse"):
                vals = groups.get((method, float(rate), metric))
                if not vals:
                    continue
                n = len(vals)
                mean = sum(vals) / n
                if n > 1:
                    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
                    sd = var ** 0.5
                else:
                    sd = 0.0
                rows.append(
                    AggregateRow(
                        dataset=config.dataset,
                        scenario=config.scenario.value,
                        method=method,
                        rate=float(rate),
                        metric=metric,
                        mean=mean,
                        sd=sd,
                        n=n,
                    )
                )
    return tuple(rows)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run every configured method on every (rate, repetition) cell.

    The report is a pure function of the config: thread count and scheduling
    order never change any emitted value, only wall times.
    """
    if threads < 1:
        raise DataError("threads must be >= 1")
    table, _ = resolve_dataset(config.dataset)
    label = config.label
    x, y = split_label(table, label)
    if not y.is_complete():
        raise DataError(f"label column {label!r} has missing entries")
    if y.kind is not LabelKind.CLASS:
        bad = [m for m in config.methods if m in _CLASSIFICATION_METHODS]
        if bad:
            raise DataError(
                f"methods {bad} need a categorical label; {label!r} is continuous"
            )
    cells = [(float(rate), rep)
             for rep in range(config.repetitions)
             for rate in config.rates]
    if threads == 1:
        results = [_run_cell(x, y, config, rate, rep) for rate, rep in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_cell, x, y, config, rate, rep)
                for rate, rep in cells
            ]
            results = [f.result() for f in futures]
    records = [rec for batch in results for rec in batch]
    records.sort(key=lambda r: (r.method, r.rate, r.repetition))
    records = tuple(records)
    return ExperimentReport(
        config=config, records=records, aggregates=_aggregate(config, records)
    )


# ---------------------------------------------------------------------------
# report emission

_RUNS_COLUMNS = (
    "dataset", "method", "scenario", "rate", "repetition", "seed",
    "masked_mse", "masked_cells", "accuracy", "downstream_mse",
    "status", "error",
)
_TIMINGS_COLUMNS = (
    "dataset", "method", "scenario", "rate", "repetition", "wall_time_seconds",
)
_AGG_COLUMNS = (
    "dataset", "scenario", "method", "rate", "metric", "mean", "sd", "n",
)
_CURVE_COLUMNS = ("metric", "method", "rate", "mean", "sd")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _num(v):
    # JSON carries the same 6-significant-digit values the CSVs do
    if v is None or isinstance(v, (int, str)):
        return v
    return float(f"{v:.6g}")


def _write_csv(path: Path, columns: tuple[str, ...], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in columns])


def emit_report(
    report: ExperimentReport,
    out_dir: str | Path,
    formats: tuple[str, ...] = ("csv", "json"),
) -> list[Path]:
    """Write result tables under out_dir; returns the paths written.

    csv: runs.csv (per-run metrics), timings.csv (wall times, kept apart so
    runs.csv is byte-stable), aggregates.csv, curves.csv (plot-ready means).
    json: report.json bundling config, runs, and aggregates.
    """
    for f in formats:
        if f not in ("csv", "json"):
            raise DataError(f"unknown report format {f!r}; known: csv, json")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "csv" in formats:
        runs = out / "runs.csv"
        _write_csv(runs, _RUNS_COLUMNS, report.records)
        written.append(runs)
        timings = out / "timings.csv"
        _write_csv(timings, _TIMINGS_COLUMNS, report.records)
        written.append(timings)
        agg = out / "aggregates.csv"
        _write_csv(agg, _AGG_COLUMNS, report.aggregates)
        written.append(agg)
        curves = out / "curves.csv"
        _write_csv(curves, _CURVE_COLUMNS, sorted(
            report.aggregates, key=lambda a: (a.metric, a.method, a.rate)
        ))
        written.append(curves)
    if "json" in formats:
        doc = {
            "config": report.config.to_json_dict(),
            "runs": [
                {c: _num(getattr(rec, c)) for c in _RUNS_COLUMNS}
                for rec in report.records
            ],
            "aggregates": [
                {c: _num(getattr(a, c)) for c in _AGG_COLUMNS}
                for a in report.aggregates
            ],
        }
        path = out / "report.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written
