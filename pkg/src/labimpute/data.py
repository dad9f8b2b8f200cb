"""Tabular data model and dataset machinery.

A DataTable is an immutable n x p grid of optionally-missing cells over a
typed column schema.  Continuous cells hold reals; categorical cells hold
dense category indices 0..K-1 whose labels live in the schema.  Missingness
is carried by an explicit boolean flag array: the flag is the single source
of truth, and every operation masks on it before doing arithmetic (the NaN
stored behind a flagged cell is a tripwire, never an input).

The module also provides CSV ingestion with schema inference, seeded
train/test splitting, exact-count MCAR masking, min-max scaling to [-1, 1],
and the two evaluation metrics (masked MSE, accuracy).
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import make_rng
from .errors import DataError, SchemaError

#: Field tokens read as a missing cell, per common UCI export conventions.
MISSING_TOKENS = ("", "NA", "?")


def round_half_away(x: float) -> int:
    """Round to the nearest integer with halves away from zero.

    Used for every count computation (split sizes, MCAR cell counts) so
    that counts are reproducible and do not depend on banker's rounding.
    """
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


class ColumnKind(enum.Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSchema:
    """Name and type of one column; categorical columns carry their labels."""

    name: str
    kind: ColumnKind
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is ColumnKind.CATEGORICAL:
            if not self.categories:
                raise SchemaError(f"categorical column {self.name!r} has no categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"duplicate category labels in column {self.name!r}")
        elif self.categories:
            raise SchemaError(f"continuous column {self.name!r} cannot list categories")

    @property
    def n_categories(self) -> int:
        return len(self.categories)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataTable:
    """Immutable typed table with explicit missingness flags.

    values : (n, p) float64, NaN at flagged cells, finite elsewhere.
    missing : (n, p) bool, True where the cell is missing.
    """

    schema: tuple[ColumnSchema, ...]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        schema = tuple(self.schema)
        object.__setattr__(self, "schema", schema)
        values = np.asarray(self.values, dtype=np.float64)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 2 or missing.shape != values.shape:
            raise DataError("values/missing must be matching 2-D arrays")
        if values.shape[1] != len(schema):
            raise DataError(
                f"schema lists {len(schema)} columns but values has {values.shape[1]}"
            )
        values = values.copy()
        values[missing] = np.nan
        present = ~missing
        if not np.all(np.isfinite(values[present])):
            raise DataError("present cells must be finite")
        for j, col in enumerate(schema):
            if col.kind is ColumnKind.CATEGORICAL:
                vj = values[present[:, j], j]
                if vj.size and (np.any(vj != np.floor(vj)) or np.any(vj < 0)
                                or np.any(vj >= col.n_categories)):
                    raise SchemaError(
                        f"column {col.name!r} holds an index outside 0..{col.n_categories - 1}"
                    )
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "missing", _freeze(missing.copy()))

    @classmethod
    def _unsafe(cls, schema: tuple[ColumnSchema, ...], values: np.ndarray,
                missing: np.ndarray) -> "DataTable":
        # Fast-path constructor for internal callers that already guarantee
        # the invariants; skips per-column validation.
        obj = object.__new__(cls)
        object.__setattr__(obj, "schema", schema)
        object.__setattr__(obj, "values", _freeze(values))
        object.__setattr__(obj, "missing", _freeze(missing))
        return obj

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema)

    def column_index(self, name: str) -> int:
        for j, c in enumerate(self.schema):
            if c.name == name:
                return j
        raise DataError(f"no column named {name!r}")

    def continuous_columns(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.schema)
                         if c.kind is ColumnKind.CONTINUOUS], dtype=np.intp)

    def categorical_columns(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.schema)
                         if c.kind is ColumnKind.CATEGORICAL], dtype=np.intp)

    def is_complete(self) -> bool:
        return not self.missing.any()

    def missing_count_by_column(self) -> np.ndarray:
        return self.missing.sum(axis=0)

    def observed_column(self, j: int) -> np.ndarray:
        """Observed values of column j, in row order."""
        return self.values[~self.missing[:, j], j]

    def with_cells(self, values: np.ndarray, missing: np.ndarray | None = None) -> "DataTable":
        """New table over the same schema with replaced cell contents."""
        if missing is None:
            missing = np.zeros_like(values, dtype=bool)
        return DataTable(self.schema, values, missing)

    def take_rows(self, idx: np.ndarray) -> "DataTable":
        idx = np.asarray(idx, dtype=np.intp)
        return DataTable._unsafe(self.schema, _freeze(self.values[idx].copy()),
                                 _freeze(self.missing[idx].copy()))

    def drop_column(self, j: int) -> "DataTable":
        keep = [k for k in range(self.n_cols) if k != j]
        schema = tuple(self.schema[k] for k in keep)
        return DataTable._unsafe(schema, _freeze(self.values[:, keep].copy()),
                                 _freeze(self.missing[:, keep].copy()))


def tables_equal(a: DataTable, b: DataTable) -> bool:
    """Bit-exact equality: same schema, same flags, same present values."""
    if a.schema != b.schema or a.values.shape != b.values.shape:
        return False
    if not np.array_equal(a.missing, b.missing):
        return False
    present = ~a.missing
    return bool(np.array_equal(a.values[present], b.values[present]))


def concat_rows(top: DataTable, bottom: DataTable) -> DataTable:
    """Row-stack two tables sharing an identical schema."""
    if top.schema != bottom.schema:
        raise SchemaError("cannot row-stack tables with different schemas")
    return DataTable._unsafe(
        top.schema,
        _freeze(np.vstack([top.values, bottom.values])),
        _freeze(np.vstack([top.missing, bottom.missing])),
    )


class LabelKind(enum.Enum):
    CLASS = "class"
    REGRESSION = "regression"


@dataclass(frozen=True)
class LabelVector:
    """Length-n target vector; class labels are indices into `categories`."""

    kind: LabelKind
    values: np.ndarray
    missing: np.ndarray
    categories: tuple[str, ...] = ()
    name: str = "label"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        missing = np.asarray(self.missing, dtype=bool).copy()
        if values.ndim != 1 or missing.shape != values.shape:
            raise DataError("label values/missing must be matching 1-D arrays")
        values[missing] = np.nan
        present = values[~missing]
        if not np.all(np.isfinite(present)):
            raise DataError("present labels must be finite")
        if self.kind is LabelKind.CLASS:
            cats = tuple(self.categories)
            if not cats:
                # Synthesize labels for plain integer classes.
                top = int(present.max()) if present.size else 0
                cats = tuple(str(k) for k in range(top + 1))
                object.__setattr__(self, "categories", cats)
            if present.size and (np.any(present != np.floor(present))
                                 or np.any(present < 0)
                                 or np.any(present >= len(cats))):
                raise SchemaError("class label outside the category range")
        elif self.categories:
            raise SchemaError("regression labels cannot list categories")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "missing", _freeze(missing))

    @classmethod
    def from_ints(cls, labels: Sequence[int], categories: Sequence[str] = (),
                  name: str = "label") -> "LabelVector":
        arr = np.asarray(labels, dtype=np.float64)
        return cls(LabelKind.CLASS, arr, np.zeros(arr.shape, dtype=bool),
                   tuple(categories), name)

    @classmethod
    def all_missing(cls, n: int, kind: LabelKind, categories: Sequence[str] = (),
                    name: str = "label") -> "LabelVector":
        if kind is LabelKind.CLASS and not categories:
            raise DataError("an all-missing class label needs explicit categories")
        return cls(kind, np.full(n, np.nan), np.ones(n, dtype=bool),
                   tuple(categories), name)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.categories)

    def is_complete(self) -> bool:
        return not self.missing.any()

    def as_ints(self) -> np.ndarray:
        if self.missing.any():
            raise DataError("label vector has missing entries")
        return self.values.astype(np.int64)

    def take(self, idx: np.ndarray) -> "LabelVector":
        idx = np.asarray(idx, dtype=np.intp)
        return LabelVector(self.kind, self.values[idx], self.missing[idx],
                           self.categories, self.name)


def labels_equal(a: LabelVector, b: LabelVector) -> bool:
    if a.kind is not b.kind or a.categories != b.categories:
        return False
    if not np.array_equal(a.missing, b.missing):
        return False
    present = ~a.missing
    return bool(np.array_equal(a.values[present], b.values[present]))


@dataclass(frozen=True)
class MissingMask:
    """A set of (row, col) coordinates inside a known table shape."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.intp)
        cols = np.asarray(self.cols, dtype=np.intp)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise DataError("mask rows/cols must be matching 1-D arrays")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.n_rows:
                raise DataError("mask row index out of range")
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise DataError("mask col index out of range")
        flat = rows * self.n_cols + cols
        order = np.argsort(flat)
        flat = flat[order]
        if flat.size and np.any(np.diff(flat) == 0):
            raise DataError("duplicate coordinates in mask")
        object.__setattr__(self, "rows", _freeze(rows[order].copy()))
        object.__setattr__(self, "cols", _freeze(cols[order].copy()))

    @classmethod
    def from_bool(cls, flags: np.ndarray) -> "MissingMask":
        flags = np.asarray(flags, dtype=bool)
        r, c = np.nonzero(flags)
        return cls(flags.shape[0], flags.shape[1], r, c)

    @property
    def count(self) -> int:
        return int(self.rows.size)

    def as_bool(self) -> np.ndarray:
        flags = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        flags[self.rows, self.cols] = True
        return flags


# ---------------------------------------------------------------------------
# CSV ingestion and emission
# ---------------------------------------------------------------------------

def _parse_real(token: str) -> float | None:
    try:
        v = float(token)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path: str | Path, schema: Sequence[ColumnSchema] | None = None,
             missing_tokens: Sequence[str] = MISSING_TOKENS) -> DataTable:
    """Read an RFC-4180 CSV with a header row into a DataTable.

    Without a schema, each column is inferred Continuous iff every
    non-missing field parses as a finite real; otherwise it is Categorical
    with categories in first-appearance order.  With a schema, header names
    must match and unknown categories are schema violations.
    """
    path = Path(path)
    miss = set(missing_tokens)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    p = len(header)
    if p == 0:
        raise DataError(f"{path}: header row has no columns")
    for i, row in enumerate(rows):
        if len(row) != p:
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {p}")

    if schema is not None:
        schema = tuple(schema)
        names = tuple(c.name for c in schema)
        if names != tuple(header):
            raise SchemaError(
                f"{path}: header {tuple(header)} does not match schema names {names}"
            )
    else:
        schema = _infer_schema(header, rows, miss)

    n = len(rows)
    values = np.zeros((n, p), dtype=np.float64)
    missing = np.zeros((n, p), dtype=bool)
    cat_index = [
        {lab: k for k, lab in enumerate(col.categories)}
        if col.kind is ColumnKind.CATEGORICAL else None
        for col in schema
    ]
    for i, row in enumerate(rows):
        for j, token in enumerate(row):
            if token in miss:
                missing[i, j] = True
                continue
            col = schema[j]
            if col.kind is ColumnKind.CONTINUOUS:
                v = _parse_real(token)
                if v is None:
                    raise DataError(
                        f"{path}: row {i}, column {col.name!r}: "
                        f"{token!r} is not a finite real"
                    )
                values[i, j] = v
            else:
                k = cat_index[j].get(token)
                if k is None:
                    raise SchemaError(
                        f"{path}: row {i}, column {col.name!r}: "
                        f"unknown category {token!r}"
                    )
                values[i, j] = k
    return DataTable(schema, values, missing)


def _infer_schema(header: Sequence[str], rows: Sequence[Sequence[str]],
                  miss: set) -> tuple[ColumnSchema, ...]:
    schema = []
    for j, name in enumerate(header):
        tokens = [row[j] for row in rows if row[j] not in miss]
        if all(_parse_real(t) is not None for t in tokens):
            schema.append(ColumnSchema(name, ColumnKind.CONTINUOUS))
        else:
            cats: list[str] = []
            seen = set()
            for t in tokens:
                if t not in seen:
                    seen.add(t)
                    cats.append(t)
            if not cats:
                # A fully-missing column with no evidence: default continuous.
                schema.append(ColumnSchema(name, ColumnKind.CONTINUOUS))
            else:
                schema.append(ColumnSchema(name, ColumnKind.CATEGORICAL, tuple(cats)))
    return tuple(schema)


def save_csv(table: DataTable, path: str | Path, missing_token: str = "NA") -> None:
    """Write a DataTable back to CSV; floats use shortest round-trip form."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            row = []
            for j, col in enumerate(table.schema):
                if table.missing[i, j]:
                    row.append(missing_token)
                elif col.kind is ColumnKind.CONTINUOUS:
                    row.append(repr(float(table.values[i, j])))
                else:
                    row.append(col.categories[int(table.values[i, j])])
            writer.writerow(row)


def schema_from_json(path: str | Path) -> tuple[ColumnSchema, ...]:
    """Read a sidecar JSON list of {name, kind, categories} into schemas."""
    with open(path) as fh:
        spec_list = json.load(fh)
    out = []
    for entry in spec_list:
        kind = ColumnKind(entry["kind"])
        out.append(ColumnSchema(entry["name"], kind,
                                tuple(entry.get("categories", ()))))
    return tuple(out)


def schema_to_json(schema: Sequence[ColumnSchema], path: str | Path) -> None:
    payload = [
        {"name": c.name, "kind": c.kind.value, "categories": list(c.categories)}
        for c in schema
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def split_label(table: DataTable, label: str | int) -> tuple[DataTable, LabelVector]:
    """Peel one column off a table as the target vector."""
    j = table.column_index(label) if isinstance(label, str) else int(label)
    if not 0 <= j < table.n_cols:
        raise DataError(f"label column index {j} out of range")
    col = table.schema[j]
    if col.kind is ColumnKind.CATEGORICAL:
        y = LabelVector(LabelKind.CLASS, table.values[:, j], table.missing[:, j],
                        col.categories, col.name)
    else:
        y = LabelVector(LabelKind.REGRESSION, table.values[:, j],
                        table.missing[:, j], name=col.name)
    return table.drop_column(j), y


# ---------------------------------------------------------------------------
# Splitting, masking, scaling
# ---------------------------------------------------------------------------

def train_test_split(table: DataTable, labels: LabelVector, ratio: float,
                     seed: int) -> tuple[tuple[DataTable, LabelVector],
                                         tuple[DataTable, LabelVector]]:
    """Row-disjoint partition via a seeded uniform shuffle.

    Train size is round(ratio * n) with halves away from zero.
    """
    n = table.n_rows
    if labels.n != n:
        raise DataError("labels length does not match table rows")
    if n < 2:
        raise DataError("need at least 2 rows to split")
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    k = round_half_away(ratio * n)
    if k == 0 or k == n:
        raise DataError(f"split ratio {ratio} leaves an empty side for n={n}")
    perm = make_rng(seed).permutation(n)
    tr, te = perm[:k], perm[k:]
    return ((table.take_rows(tr), labels.take(tr)),
            (table.take_rows(te), labels.take(te)))


def apply_mcar(table: DataTable, rate: float, seed: int) -> tuple[DataTable, MissingMask]:
    """Blank exactly round(rate * n * p) distinct cells, chosen uniformly.

    The input must be fully observed; rate must lie in [0, 1).
    """
    if not 0.0 <= rate < 1.0:
        raise DataError(f"missing rate must lie in [0, 1), got {rate}")
    if table.missing.any():
        raise DataError("table already has missing cells; refusing to re-mask")
    n, p = table.n_rows, table.n_cols
    k = round_half_away(rate * n * p)
    if k == 0:
        empty = MissingMask(n, p, np.array([], dtype=np.intp), np.array([], dtype=np.intp))
        return table, empty
    flat = make_rng(seed).choice(n * p, size=k, replace=False)
    rows, cols = np.divmod(flat, p)
    mask = MissingMask(n, p, rows, cols)
    flags = mask.as_bool()
    values = table.values.copy()
    values[flags] = np.nan
    return DataTable._unsafe(table.schema, _freeze(values), _freeze(flags)), mask


@dataclass(frozen=True)
class ScalingParams:
    """Per-column observed min/max from the fit table; NaN for categorical."""

    col_min: np.ndarray
    col_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "col_min", _freeze(np.asarray(self.col_min, dtype=np.float64).copy()))
        object.__setattr__(self, "col_max", _freeze(np.asarray(self.col_max, dtype=np.float64).copy()))


def scale_minmax(fit_table: DataTable, apply_tables: Sequence[DataTable]
                 ) -> tuple[list[DataTable], ScalingParams]:
    """Map continuous cells to [-1, 1] using the fit table's observed range.

    v -> 2 * (v - min) / (max - min) - 1; a constant column maps to 0.
    Categorical and missing cells pass through untouched.  Every apply
    table must share the fit table's schema.
    """
    p = fit_table.n_cols
    col_min = np.full(p, np.nan)
    col_max = np.full(p, np.nan)
    for j, col in enumerate(fit_table.schema):
        if col.kind is not ColumnKind.CONTINUOUS:
            continue
        obs = fit_table.observed_column(j)
        if obs.size == 0:
            raise DataError(f"continuous column {col.name!r} is fully missing; cannot fit scale")
        col_min[j] = obs.min()
        col_max[j] = obs.max()
    params = ScalingParams(col_min, col_max)
    return [scale_apply(t, fit_table.schema, params) for t in apply_tables], params


def scale_apply(table: DataTable, fit_schema: tuple[ColumnSchema, ...],
                params: ScalingParams) -> DataTable:
    if table.schema != tuple(fit_schema):
        raise SchemaError("apply table schema differs from the fit table")
    values = table.values.copy()
    for j, col in enumerate(table.schema):
        if col.kind is not ColumnKind.CONTINUOUS:
            continue
        lo, hi = params.col_min[j], params.col_max[j]
        obs = ~table.missing[:, j]
        if hi == lo:
            values[obs, j] = 0.0
        else:
            values[obs, j] = 2.0 * (values[obs, j] - lo) / (hi - lo) - 1.0
    return DataTable._unsafe(table.schema, _freeze(values), _freeze(table.missing.copy()))


def inverse_scale(table: DataTable, params: ScalingParams) -> DataTable:
    """Undo scale_apply; constant columns recover their fitted value."""
    values = table.values.copy()
    for j, col in enumerate(table.schema):
        if col.kind is not ColumnKind.CONTINUOUS:
            continue
        lo, hi = params.col_min[j], params.col_max[j]
        obs = ~table.missing[:, j]
        if hi == lo:
            values[obs, j] = lo
        else:
            values[obs, j] = (values[obs, j] + 1.0) / 2.0 * (hi - lo) + lo
    return DataTable._unsafe(table.schema, _freeze(values), _freeze(table.missing.copy()))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class MaskedMse:
    """Masked-cell mean squared error plus the number of cells it averaged."""

    __slots__ = ("value", "n_cells")

    def __init__(self, value: float, n_cells: int):
        self.value = float(value)
        self.n_cells = int(n_cells)

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"MaskedMse(value={self.value!r}, n_cells={self.n_cells})"


def masked_mse(imputed: DataTable, original: DataTable, mask: MissingMask) -> MaskedMse:
    """MSE between imputed and original over the masked continuous cells.

    With no masked continuous cell the value is 0 and n_cells records that.
    """
    if imputed.schema != original.schema:
        raise SchemaError("imputed/original schemas differ")
    if imputed.values.shape != original.values.shape:
        raise DataError("imputed/original shapes differ")
    if (mask.n_rows, mask.n_cols) != imputed.values.shape:
        raise DataError("mask shape does not match the tables")
    cont = np.zeros(imputed.n_cols, dtype=bool)
    cont[imputed.continuous_columns()] = True
    keep = cont[mask.cols]
    rows, cols = mask.rows[keep], mask.cols[keep]
    if rows.size == 0:
        return MaskedMse(0.0, 0)
    a = imputed.values[rows, cols]
    b = original.values[rows, cols]
    if np.any(np.isnan(a)) or np.any(np.isnan(b)):
        raise DataError("masked cells must be filled in both tables to score")
    return MaskedMse(float(np.mean((a - b) ** 2)), int(rows.size))


def accuracy(pred: LabelVector, truth: LabelVector) -> float:
    """Exact-match fraction between two complete label vectors."""
    if pred.n != truth.n:
        raise DataError("prediction/truth lengths differ")
    if pred.missing.any() or truth.missing.any():
        raise DataError("accuracy needs complete label vectors")
    if pred.n == 0:
        raise DataError("accuracy of an empty vector is undefined")
    return float(np.mean(pred.values == truth.values))
