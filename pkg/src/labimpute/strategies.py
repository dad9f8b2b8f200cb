"""Label-aware imputation strategies and classification baselines.

The central move: append the target as one more column of the table so the
imputation engine can exploit it, then peel it back off.

  iul_impute     impute [X | y] jointly, return both parts completed
  di_impute      impute X alone (the label-free counterpart)
  cbmi_predict   classify by stacking train and test rows, hiding the test
                 labels, and letting the imputer fill them in; no separate
                 classifier is ever fit
  iclf_predict   impute first, then fit a forest classifier
  rf_missing_predict  skip imputation, fit the forest directly on missing
                 data with majority-direction routing
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import (
    ColumnKind,
    ColumnSchema,
    DataTable,
    LabelKind,
    LabelVector,
    concat_rows,
)
from .errors import DataError
from .forest import ForestParams, fit_forest, predict, predict_with_missing
from .imputers import (
    IterationTrace,
    MiceParams,
    MissForestParams,
    mice_impute,
    missforest_impute,
)

ImputerParams = MissForestParams | MiceParams


class Scenario(enum.Enum):
    TEST_OBSERVED = "test_observed"
    TEST_MISSING = "test_missing"


@dataclass(frozen=True)
class StackedTable:
    """A feature table with its label appended as the last column."""

    table: DataTable
    label_kind: LabelKind
    label_name: str


def stack_labels(X: DataTable, y: LabelVector) -> StackedTable:
    """Append y as the last column of X."""
    if y.n != X.n_rows:
        raise DataError("label length does not match table rows")
    name = y.name
    if name in X.column_names:
        name = name + "_target"
    if y.kind is LabelKind.CLASS:
        col = ColumnSchema(name, ColumnKind.CATEGORICAL, y.categories)
    else:
        col = ColumnSchema(name, ColumnKind.CONTINUOUS)
    schema = X.schema + (col,)
    values = np.column_stack([X.values, y.values])
    missing = np.column_stack([X.missing, y.missing])
    return StackedTable(DataTable(schema, values, missing), y.kind, y.name)


def unstack(stacked: StackedTable) -> tuple[DataTable, LabelVector]:
    """Split the last column back off as the label vector."""
    t = stacked.table
    j = t.n_cols - 1
    col = t.schema[j]
    if stacked.label_kind is LabelKind.CLASS:
        y = LabelVector(LabelKind.CLASS, t.values[:, j], t.missing[:, j],
                        col.categories, stacked.label_name)
    else:
        y = LabelVector(LabelKind.REGRESSION, t.values[:, j], t.missing[:, j],
                        name=stacked.label_name)
    return t.drop_column(j), y


def _run_imputer(table: DataTable, params: ImputerParams) -> DataTable:
    if isinstance(params, MissForestParams):
        out, _ = missforest_impute(table, params)
        return out
    if isinstance(params, MiceParams):
        return mice_impute(table, params)
    raise DataError(f"unknown imputer parameter type {type(params).__name__}")


def iul_impute(X: DataTable, y: LabelVector, params: ImputerParams
               ) -> tuple[DataTable, LabelVector]:
    """Impute X with the label stacked in as an extra column.

    The label may itself have missing entries (they are imputed along with
    everything else); a fully-observed label comes back bit-exact.
    """
    stacked = stack_labels(X, y)
    completed = _run_imputer(stacked.table, params)
    return unstack(StackedTable(completed, stacked.label_kind, stacked.label_name))


def di_impute(X: DataTable, params: ImputerParams) -> DataTable:
    """Impute X alone, without looking at any label."""
    return _run_imputer(X, params)


@dataclass(frozen=True)
class CbmiResult:
    y_pred: LabelVector
    y_train_imputed: LabelVector
    completed: DataTable
    trace: IterationTrace


def cbmi_predict(X_train: DataTable, y_train: LabelVector, X_test: DataTable,
                 params: MissForestParams) -> CbmiResult:
    """Classify test rows by imputing their hidden labels.

    Builds [X_train | y_train] over [X_test | all-missing], row-stacks the
    two blocks (train first), runs the forest imputer on the whole thing,
    and reads the test-row label column back out as the predictions.  Any
    missing training labels are imputed in the same pass, so partially
    labeled training data needs no special handling.
    """
    if y_train.kind is not LabelKind.CLASS:
        raise DataError("label-imputation classification needs class labels")
    if X_train.schema != X_test.schema:
        raise DataError("train and test schemas differ")
    if bool(y_train.missing.all()) and y_train.n > 0:
        raise DataError("all training labels are missing; nothing to learn from")
    n_train = X_train.n_rows
    d_train = stack_labels(X_train, y_train)
    y_hidden = LabelVector.all_missing(X_test.n_rows, LabelKind.CLASS,
                                       y_train.categories, y_train.name)
    d_test = stack_labels(X_test, y_hidden)
    stacked = concat_rows(d_train.table, d_test.table)
    completed, trace = missforest_impute(stacked, params)
    label_col = completed.n_cols - 1
    col = completed.schema[label_col]
    values = completed.values[:, label_col]
    flags = completed.missing[:, label_col]
    y_all = LabelVector(LabelKind.CLASS, values, flags, col.categories, y_train.name)
    return CbmiResult(
        y_pred=y_all.take(np.arange(n_train, n_train + X_test.n_rows)),
        y_train_imputed=y_all.take(np.arange(n_train)),
        completed=completed,
        trace=trace,
    )


def iclf_predict(X_train: DataTable, y_train: LabelVector, X_test: DataTable,
                 imputer_params: ImputerParams, forest_params: ForestParams,
                 scenario: Scenario, seed: int) -> LabelVector:
    """Impute, then classify with a forest.

    Under TEST_MISSING the test rows are row-stacked with the training
    input for a joint label-free imputation and split back out, while the
    classifier itself is trained on an imputation of the training input
    alone.  Under TEST_OBSERVED the test rows must already be complete.
    The forest is seeded with `seed` directly, so on fully-observed data
    this composes to a plain fit-and-predict.
    """
    if y_train.kind is not LabelKind.CLASS:
        raise DataError("classification needs class labels")
    if y_train.missing.any():
        raise DataError("training labels must be fully observed")
    if X_train.schema != X_test.schema:
        raise DataError("train and test schemas differ")
    if scenario is Scenario.TEST_MISSING:
        merged = concat_rows(X_train, X_test)
        merged_imp = di_impute(merged, imputer_params)
        X_test_imp = merged_imp.take_rows(
            np.arange(X_train.n_rows, merged.n_rows))
        X_train_imp = di_impute(X_train, imputer_params)
    else:
        if X_test.missing.any():
            raise DataError("test rows must be complete under test_observed")
        X_test_imp = X_test
        X_train_imp = di_impute(X_train, imputer_params)
    model = fit_forest(X_train_imp, y_train, forest_params, seed)
    return predict(model, X_test_imp)


def rf_missing_predict(X_train: DataTable, y_train: LabelVector, X_test: DataTable,
                       forest_params: ForestParams, seed: int) -> LabelVector:
    """Forest classification straight on the incomplete data.

    No imputation: split scores ignore rows missing the candidate feature
    and rows are routed through the majority child at both fit and
    predict time.
    """
    if y_train.kind is not LabelKind.CLASS:
        raise DataError("classification needs class labels")
    if y_train.missing.any():
        raise DataError("training labels must be fully observed")
    if X_train.schema != X_test.schema:
        raise DataError("train and test schemas differ")
    model = fit_forest(X_train, y_train, forest_params, seed, allow_missing=True)
    return predict_with_missing(model, X_test)
