"""Iterative imputation engines.

missforest_impute fills a mixed-type table by cycling over columns in
ascending missing-count order, refitting a random forest per column on the
currently-completed values of the other columns and overwriting only the
originally-missing cells.  Sweeps repeat until a convergence statistic
first worsens (the previous sweep's matrix is returned) or max_iter is
reached.  Two statistics are tracked:

  continuous   sum((new - old)^2) / sum(new^2) over all continuous columns
  categorical  changed originally-missing categorical cells / their count

mice_impute is the deterministic chained-equations counterpart: ridge
least squares per continuous column, one-vs-rest least-squares scoring
with argmax per categorical column, a fixed number of sweeps, no sampling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import child_seed
from .data import ColumnKind, ColumnSchema, DataTable, LabelKind, LabelVector, _freeze
from .errors import DataError
from .forest import ForestParams, fit_forest, predict

_COLUMN_TAG = 424243  # stream separator for per-column forest seeds


@dataclass(frozen=True)
class MissForestParams:
    forest: ForestParams = ForestParams()
    max_iter: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise DataError("max_iter must be >= 1")


@dataclass(frozen=True)
class MiceParams:
    n_iter: int = 10
    ridge: float = 1e-8

    def __post_init__(self):
        if self.n_iter < 1:
            raise DataError("n_iter must be >= 1")
        if self.ridge < 0:
            raise DataError("ridge must be >= 0")


@dataclass(frozen=True)
class SweepRecord:
    """Convergence statistics after one full column sweep."""

    iteration: int
    delta_continuous: float | None
    delta_categorical: float | None
    na_count_categorical: int


@dataclass
class IterationTrace:
    sweeps: list[SweepRecord] = field(default_factory=list)
    stop_reason: str = ""

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "delta_continuous", "delta_categorical"])
            for s in self.sweeps:
                w.writerow([
                    s.iteration,
                    "" if s.delta_continuous is None else repr(s.delta_continuous),
                    "" if s.delta_categorical is None else repr(s.delta_categorical),
                ])


def _check_columns_not_all_missing(table: DataTable) -> None:
    counts = table.missing_count_by_column()
    for j, col in enumerate(table.schema):
        if counts[j] == table.n_rows and table.n_rows > 0:
            raise DataError(f"column {col.name!r} is fully missing; cannot impute")


def init_impute(table: DataTable) -> DataTable:
    """Fill every missing cell with its column mean (continuous) or mode
    (categorical, ties to the smallest category index)."""
    _check_columns_not_all_missing(table)
    values = table.values.copy()
    for j, col in enumerate(table.schema):
        holes = table.missing[:, j]
        if not holes.any():
            continue
        obs = table.values[~holes, j]
        if col.kind is ColumnKind.CONTINUOUS:
            values[holes, j] = obs.mean()
        else:
            counts = np.bincount(obs.astype(np.int64), minlength=col.n_categories)
            values[holes, j] = float(np.argmax(counts))
    return table.with_cells(values)


def order_columns_by_missing(table: DataTable) -> list[int]:
    """Column indices sorted by ascending missing count, ties by index."""
    counts = table.missing_count_by_column()
    return [int(j) for j in np.argsort(counts, kind="stable")]


def delta_continuous(new: DataTable | np.ndarray, old: DataTable | np.ndarray,
                     columns: Iterable[int]) -> float:
    """Relative squared change over the given continuous columns."""
    new_v = new.values if isinstance(new, DataTable) else np.asarray(new)
    old_v = old.values if isinstance(old, DataTable) else np.asarray(old)
    cols = np.asarray(list(columns), dtype=np.intp)
    if cols.size == 0:
        raise DataError("delta_continuous needs at least one column")
    num = float(((new_v[:, cols] - old_v[:, cols]) ** 2).sum())
    den = float((new_v[:, cols] ** 2).sum())
    if den == 0.0:
        raise DataError("delta_continuous denominator is zero")
    return num / den


def delta_categorical(new: DataTable | np.ndarray, old: DataTable | np.ndarray,
                      columns: Iterable[int], missing: np.ndarray) -> float:
    """Fraction of originally-missing categorical cells that changed."""
    new_v = new.values if isinstance(new, DataTable) else np.asarray(new)
    old_v = old.values if isinstance(old, DataTable) else np.asarray(old)
    cols = np.asarray(list(columns), dtype=np.intp)
    if cols.size == 0:
        raise DataError("delta_categorical needs at least one column")
    holes = missing[:, cols]
    total = int(holes.sum())
    if total == 0:
        raise DataError("delta_categorical needs at least one missing cell")
    changed = int((new_v[:, cols][holes] != old_v[:, cols][holes]).sum())
    return changed / total


def _fit_predict_column(values: np.ndarray, table: DataTable, s: int,
                        obs: np.ndarray, mis: np.ndarray,
                        forest_params: ForestParams, seed: int) -> np.ndarray:
    """Forest-regress column s on all other columns; return predictions for
    the rows flagged in `mis`."""
    others = [j for j in range(table.n_cols) if j != s]
    schema = tuple(table.schema[j] for j in others)
    X_obs = DataTable._unsafe(schema, _freeze(values[np.ix_(obs, others)]),
                              _freeze(np.zeros((int(obs.sum()), len(others)), dtype=bool)))
    col = table.schema[s]
    if col.kind is ColumnKind.CATEGORICAL:
        y = LabelVector(LabelKind.CLASS, values[obs, s],
                        np.zeros(int(obs.sum()), dtype=bool), col.categories, col.name)
    else:
        y = LabelVector(LabelKind.REGRESSION, values[obs, s],
                        np.zeros(int(obs.sum()), dtype=bool), name=col.name)
    model = fit_forest(X_obs, y, forest_params, seed)
    X_mis = DataTable._unsafe(schema, _freeze(values[np.ix_(mis, others)]),
                              _freeze(np.zeros((int(mis.sum()), len(others)), dtype=bool)))
    return predict(model, X_mis).values


def missforest_impute(table: DataTable, params: MissForestParams
                      ) -> tuple[DataTable, IterationTrace]:
    """Iterative per-column random-forest imputation.

    Returns the completed table and a per-sweep trace.  Observed cells are
    preserved bit-exactly; a table with no missing cells is returned
    unchanged with an empty trace.
    """
    trace = IterationTrace()
    if table.is_complete():
        trace.stop_reason = "no_missing"
        return table, trace
    _check_columns_not_all_missing(table)
    if table.n_cols < 2:
        raise DataError("forest imputation needs at least two columns")

    mask = table.missing
    order = order_columns_by_missing(table)
    cont_cols = [int(j) for j in table.continuous_columns()]
    cat_cols = [int(j) for j in table.categorical_columns()]
    cat_na = int(mask[:, cat_cols].sum()) if cat_cols else 0
    col_seeds = {s: child_seed(params.seed, _COLUMN_TAG, s) for s in order}

    cur = init_impute(table).values.copy()
    prev_dc: float | None = None
    prev_dg: float | None = None
    last_vals = cur
    for it in range(1, params.max_iter + 1):
        old = cur.copy()
        for s in order:
            mis = mask[:, s]
            if not mis.any():
                continue
            obs = ~mis
            cur[mis, s] = _fit_predict_column(cur, table, s, obs, mis,
                                              params.forest, col_seeds[s])
        dc: float | None = None
        if cont_cols:
            try:
                dc = delta_continuous(cur, old, cont_cols)
            except DataError:
                dc = None  # zero denominator: criterion unusable this run
        dg = delta_categorical(cur, old, cat_cols, mask) if cat_na else None
        trace.sweeps.append(SweepRecord(it, dc, dg, cat_na))

        worsened = ((dc is not None and prev_dc is not None and dc > prev_dc)
                    or (dg is not None and prev_dg is not None and dg > prev_dg))
        if worsened:
            trace.stop_reason = "delta_increase"
            last_vals = old  # the sweep before the increase
            break
        if np.array_equal(cur, old):
            # a full sweep changed nothing; with per-column seeds fixed
            # across sweeps every later sweep would repeat it exactly
            trace.stop_reason = "fixed_point"
            last_vals = cur
            break
        prev_dc, prev_dg = dc, dg
        last_vals = cur
    else:
        trace.stop_reason = "max_iter"

    return table.with_cells(last_vals.copy()), trace


# ---------------------------------------------------------------------------
# Chained equations
# ---------------------------------------------------------------------------

def _design_columns(schema: Sequence[ColumnSchema], cols: Sequence[int]
                    ) -> list[tuple[int, int]]:
    """Expansion plan: (source column, category) pairs; category -1 keeps a
    continuous column as-is, k >= 1 one-hot encodes category k (the first
    category is the reference level and is dropped)."""
    plan: list[tuple[int, int]] = []
    for j in cols:
        col = schema[j]
        if col.kind is ColumnKind.CONTINUOUS:
            plan.append((j, -1))
        else:
            for k in range(1, col.n_categories):
                plan.append((j, k))
    return plan


def _build_design(values: np.ndarray, plan: list[tuple[int, int]]) -> np.ndarray:
    n = values.shape[0]
    A = np.ones((n, len(plan) + 1), dtype=np.float64)
    for idx, (j, k) in enumerate(plan, start=1):
        if k < 0:
            A[:, idx] = values[:, j]
        else:
            A[:, idx] = values[:, j] == k
    return A


def _ridge_solve(A: np.ndarray, b: np.ndarray, ridge: float) -> np.ndarray:
    """Least squares with an L2 penalty on everything but the intercept."""
    M = A.T @ A
    reg = np.full(M.shape[0], ridge)
    reg[0] = 0.0  # intercept stays unpenalized
    M = M + np.diag(reg)
    if ridge == 0.0 and np.linalg.matrix_rank(M) < M.shape[0]:
        raise DataError("singular design; set ridge > 0 to regularize")
    try:
        return np.linalg.solve(M, A.T @ b)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"normal equations failed ({exc}); set ridge > 0") from exc


def mice_impute(table: DataTable, params: MiceParams) -> DataTable:
    """Deterministic chained-equations imputation.

    Runs exactly n_iter sweeps in ascending-missing-count column order.
    Continuous columns are refit by ridge least squares on all other
    columns (categoricals one-hot encoded, reference level dropped);
    categorical columns take the argmax of one-vs-rest least-squares
    scores over the column's observed categories, ties to the smallest
    index.  No randomness is involved anywhere.
    """
    if table.is_complete():
        return table
    _check_columns_not_all_missing(table)
    if table.n_cols < 2:
        raise DataError("chained-equations imputation needs at least two columns")

    mask = table.missing
    order = order_columns_by_missing(table)
    cur = init_impute(table).values.copy()
    observed_cats = {
        j: np.unique(table.values[~mask[:, j], j]).astype(np.int64)
        for j in table.categorical_columns()
    }

    for _ in range(params.n_iter):
        for s in order:
            mis = mask[:, s]
            if not mis.any():
                continue
            obs = ~mis
            plan = _design_columns(table.schema, [j for j in range(table.n_cols) if j != s])
            A = _build_design(cur, plan)
            if table.schema[s].kind is ColumnKind.CONTINUOUS:
                w = _ridge_solve(A[obs], cur[obs, s], params.ridge)
                cur[mis, s] = A[mis] @ w
            else:
                cats = observed_cats[int(s)]
                scores = np.empty((int(mis.sum()), cats.size))
                for i, c in enumerate(cats):
                    w = _ridge_solve(A[obs], (cur[obs, s] == c).astype(np.float64),
                                     params.ridge)
                    scores[:, i] = A[mis] @ w
                winner = np.argmax(scores, axis=1)  # ties to the smallest index
                cur[mis, s] = cats[winner].astype(np.float64)
    return table.with_cells(cur)
