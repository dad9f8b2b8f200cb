import dataclasses
import json

import numpy as np
import pytest

from labimpute.data import load_csv, save_csv
from labimpute.errors import DataError
from labimpute.forest import ForestParams
from labimpute.harness import (
    AggregateRow,
    ExperimentConfig,
    emit_report,
    load_experiment_config,
    resolve_dataset,
    run_experiment,
    save_experiment_config,
)
from labimpute.strategies import Scenario


def small_config(**overrides) -> ExperimentConfig:
    base = dict(
        dataset="builtin:iris",
        label="species",
        scenario=Scenario.TEST_MISSING,
        rates=(0.3,),
        repetitions=2,
        methods=("cbmi", "iul-vs-di-mice"),
        seed=11,
        forest=ForestParams(n_trees=3),
        missforest_max_iter=2,
        mice_n_iter=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def records_without_time(report):
    return [
        dataclasses.replace(r, wall_time_seconds=0.0) for r in report.records
    ]


# --- config ---

def test_config_json_round_trip(tmp_path):
    cfg = small_config(rates=(0.1, 0.5), forest=ForestParams(n_trees=7, mtry=2))
    path = tmp_path / "cfg.json"
    save_experiment_config(cfg, path)
    loaded = load_experiment_config(path)
    assert loaded == cfg


def test_config_defaults_from_minimal_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dataset": "builtin:iris", "label": "species"}))
    cfg = load_experiment_config(path)
    assert cfg.rates == (0.2, 0.4, 0.6, 0.8)
    assert cfg.repetitions == 10
    assert cfg.scenario is Scenario.TEST_MISSING
    assert cfg.forest == ForestParams()


def test_config_default_rates_follow_scenario(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "dataset": "builtin:iris", "label": "species",
        "scenario": "test_observed",
    }))
    assert load_experiment_config(path).rates == (0.0, 0.2, 0.4, 0.6, 0.8)
    path.write_text(json.dumps({
        "dataset": "builtin:iris", "label": "species",
        "scenario": "test_observed", "rates": [0.5],
    }))
    assert load_experiment_config(path).rates == (0.5,)


def test_config_rejections(tmp_path):
    with pytest.raises(DataError, match="unknown method"):
        small_config(methods=("notathing",))
    with pytest.raises(DataError, match="outside"):
        small_config(rates=(1.0,))
    with pytest.raises(DataError, match="duplicate rates"):
        small_config(rates=(0.2, 0.2))
    with pytest.raises(DataError, match="duplicate methods"):
        small_config(methods=("cbmi", "cbmi"))
    with pytest.raises(DataError, match="repetitions"):
        small_config(repetitions=0)
    with pytest.raises(DataError, match="train_ratio"):
        small_config(train_ratio=1.5)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dataset": "x.csv", "label": "y", "bogus": 1}))
    with pytest.raises(DataError, match="unknown config keys"):
        load_experiment_config(path)
    path.write_text("{not json")
    with pytest.raises(DataError, match="not valid JSON"):
        load_experiment_config(path)
    with pytest.raises(DataError, match="config file not found"):
        load_experiment_config(tmp_path / "absent.json")
    path.write_text(json.dumps({"dataset": "x.csv", "label": "y", "scenario": "nope"}))
    with pytest.raises(DataError, match="scenario must be one of"):
        load_experiment_config(path)


def test_record_method_expansion():
    cfg = small_config(
        methods=("iul-vs-di-missforest", "cbmi", "iul-vs-di-mice")
    )
    assert cfg.record_methods() == (
        "iul-missforest", "di-missforest", "cbmi", "iul-mice", "di-mice",
    )


def test_resolve_builtin_iris():
    table, label = resolve_dataset("builtin:iris")
    assert (table.n_rows, table.n_cols) == (150, 5)
    assert label == "species"
    assert table.is_complete()
    with pytest.raises(DataError, match="unknown builtin"):
        resolve_dataset("builtin:nope")
    with pytest.raises(DataError, match="dataset file not found"):
        resolve_dataset("/no/such/file.csv")


# --- running ---

def test_run_shapes_and_ordering():
    cfg = small_config(rates=(0.1, 0.4))
    report = run_experiment(cfg)
    assert len(report.records) == 2 * 2 * 3  # rates x reps x expanded methods
    keys = [(r.method, r.rate, r.repetition) for r in report.records]
    assert keys == sorted(keys)
    assert all(r.status == "ok" for r in report.records)
    assert all(r.dataset == "builtin:iris" for r in report.records)
    for r in report.records:
        if r.method == "cbmi":
            assert r.accuracy is not None and r.masked_mse is None
        else:
            assert r.masked_mse is not None and r.accuracy is None
            # scored on the test side of the pool: 60 rows x 4 numeric cols
            assert r.masked_cells == round(60 * 4 * r.rate)


def test_thread_count_never_changes_results():
    cfg = small_config(rates=(0.15, 0.45))
    a = run_experiment(cfg, threads=1)
    b = run_experiment(cfg, threads=4)
    assert records_without_time(a) == records_without_time(b)
    assert a.aggregates == b.aggregates


def test_repeat_run_identical():
    cfg = small_config()
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert records_without_time(a) == records_without_time(b)


def test_seeds_unique_per_record():
    cfg = small_config(rates=(0.1, 0.4), repetitions=3)
    report = run_experiment(cfg)
    seeds = [r.seed for r in report.records]
    assert len(set(seeds)) == len(seeds)


def test_adding_method_leaves_others_untouched():
    lean = run_experiment(small_config(methods=("cbmi",)))
    full = run_experiment(small_config(methods=("cbmi", "rf-missing")))
    lean_cbmi = [r for r in records_without_time(lean) if r.method == "cbmi"]
    full_cbmi = [r for r in records_without_time(full) if r.method == "cbmi"]
    assert lean_cbmi == full_cbmi


def test_rate_zero_classifiers_coincide():
    # with nothing masked the imputers are no-ops and both pipelines reduce
    # to one forest fit on identical data with the shared per-cell seed
    cfg = small_config(
        scenario=Scenario.TEST_OBSERVED, rates=(0.0,),
        methods=("iclf-missforest", "rf-missing"),
        forest=ForestParams(n_trees=10), repetitions=3,
    )
    report = run_experiment(cfg)
    by = {}
    for r in report.records:
        by[(r.method, r.repetition)] = r.accuracy
    for rep in range(3):
        assert by[("iclf-missforest", rep)] == by[("rf-missing", rep)]


def test_rate_zero_test_observed():
    cfg = small_config(
        scenario=Scenario.TEST_OBSERVED, rates=(0.0,), methods=("iul-vs-di-mice",)
    )
    report = run_experiment(cfg)
    for r in report.records:
        assert r.status == "ok"
        assert r.masked_mse == 0.0
        assert r.masked_cells == 0


def test_regression_label_downstream(tmp_path):
    rng = np.random.default_rng(3)
    n = 40
    a = rng.normal(size=n)
    b = rng.normal(size=n)
    y = 2.0 * a - b + rng.normal(scale=0.1, size=n)
    path = tmp_path / "reg.csv"
    with open(path, "w") as fh:
        fh.write("a,b,target\n")
        for i in range(n):
            fh.write(f"{float(a[i])!r},{float(b[i])!r},{float(y[i])!r}\n")
    cfg = small_config(
        dataset=str(path), label="target", rates=(0.2,),
        methods=("iul-vs-di-mice",), repetitions=2,
    )
    report = run_experiment(cfg)
    assert all(r.status == "ok" for r in report.records)
    assert all(r.downstream_mse is not None for r in report.records)
    metrics = {a.metric for a in report.aggregates}
    assert metrics == {"masked_mse", "downstream_mse"}


def test_classification_methods_rejected_on_regression_label(tmp_path):
    path = tmp_path / "reg.csv"
    path.write_text("a,target\n" + "".join(f"{i},{i * 0.5}\n" for i in range(20)))
    cfg = small_config(dataset=str(path), label="target", methods=("cbmi",))
    with pytest.raises(DataError, match="categorical label"):
        run_experiment(cfg)


def test_method_failure_becomes_error_record():
    # forest mtry larger than the feature count fails at fit time; the
    # mice-based rows in the same cells do not touch a forest and still pass
    cfg = small_config(
        methods=("rf-missing", "iul-vs-di-mice"),
        forest=ForestParams(n_trees=3, mtry=50),
    )
    report = run_experiment(cfg)
    by_method = {}
    for r in report.records:
        by_method.setdefault(r.method, []).append(r)
    assert all(r.status == "error" for r in by_method["rf-missing"])
    assert all("mtry" in r.error for r in by_method["rf-missing"])
    assert all(r.status == "ok" for r in by_method["iul-mice"])
    # failed rows never reach the aggregates
    assert not any(a.method == "rf-missing" for a in report.aggregates)


def test_missing_label_column_rejected():
    cfg = small_config(label="petals")
    with pytest.raises(DataError):
        run_experiment(cfg)


# --- aggregation ---

def test_aggregate_mean_sd_oracle():
    cfg = small_config(methods=("cbmi",), repetitions=3)
    report = run_experiment(cfg)
    vals = [r.accuracy for r in report.records]
    mean = sum(vals) / 3
    sd = (sum((v - mean) ** 2 for v in vals) / 2) ** 0.5
    (agg,) = report.aggregates
    assert agg == AggregateRow(
        dataset="builtin:iris", scenario="test_missing", method="cbmi",
        rate=0.3, metric="accuracy", mean=mean, sd=sd, n=3,
    )


def test_single_repetition_sd_zero():
    cfg = small_config(methods=("cbmi",), repetitions=1)
    (agg,) = run_experiment(cfg).aggregates
    assert agg.sd == 0.0 and agg.n == 1


# --- emission ---

def test_emit_report_files(tmp_path):
    report = run_experiment(small_config())
    paths = emit_report(report, tmp_path / "out")
    names = [p.name for p in paths]
    assert names == [
        "runs.csv", "timings.csv", "aggregates.csv", "curves.csv", "report.json",
    ]
    runs = (tmp_path / "out" / "runs.csv").read_text().splitlines()
    assert runs[0] == (
        "dataset,method,scenario,rate,repetition,seed,masked_mse,"
        "masked_cells,accuracy,downstream_mse,status,error"
    )
    assert len(runs) == 1 + len(report.records)
    timings = (tmp_path / "out" / "timings.csv").read_text().splitlines()
    assert timings[0] == (
        "dataset,method,scenario,rate,repetition,wall_time_seconds"
    )
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["config"]["dataset"] == "builtin:iris"
    assert len(doc["runs"]) == len(report.records)
    assert len(doc["aggregates"]) == len(report.aggregates)


def test_emit_empty_report_headers_only(tmp_path):
    from labimpute.harness import ExperimentReport

    empty = ExperimentReport(config=small_config(), records=(), aggregates=())
    emit_report(empty, tmp_path)
    for name in ("runs.csv", "timings.csv", "aggregates.csv", "curves.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert len(lines) == 1 and "," in lines[0]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["runs"] == [] and doc["aggregates"] == []


def test_emit_csv_json_numbers_agree(tmp_path):
    import csv

    report = run_experiment(small_config())
    emit_report(report, tmp_path)
    with open(tmp_path / "runs.csv") as fh:
        rows = list(csv.DictReader(fh))
    doc = json.loads((tmp_path / "report.json").read_text())
    for row, jrow in zip(rows, doc["runs"]):
        for key in ("masked_mse", "accuracy", "rate"):
            csv_v = None if row[key] == "" else float(row[key])
            assert csv_v == jrow[key]
        assert int(row["seed"]) == jrow["seed"]


def test_emit_format_selection(tmp_path):
    report = run_experiment(small_config(methods=("iul-vs-di-mice",)))
    paths = emit_report(report, tmp_path / "j", formats=("json",))
    assert [p.name for p in paths] == ["report.json"]
    with pytest.raises(DataError, match="unknown report format"):
        emit_report(report, tmp_path, formats=("xml",))


def test_runs_csv_byte_identical_across_threads(tmp_path):
    cfg = small_config()
    blobs = []
    for i, threads in enumerate((1, 4, 1, 4)):
        out = tmp_path / f"run{i}"
        emit_report(run_experiment(cfg, threads=threads), out)
        blobs.append((out / "runs.csv").read_bytes())
    assert all(b == blobs[0] for b in blobs)
