"""Random-forest imputation for mixed tables, and classifiers built on it.

The core engine fills missing cells by repeatedly fitting random forests
column by column.  On top of it sit two labeling strategies: stacking the
label into the table before imputing, and classifying unlabeled rows by
imputing their blanked-out labels.  A deterministic chained-equations
imputer, a forest that routes missing values natively, an experiment
harness, and a verifier for the label-stacking error decomposition round
out the package.
"""

from .data import (
    ColumnKind,
    ColumnSchema,
    DataTable,
    LabelKind,
    LabelVector,
    MaskedMse,
    MissingMask,
    ScalingParams,
    accuracy,
    apply_mcar,
    concat_rows,
    labels_equal,
    load_csv,
    masked_mse,
    save_csv,
    scale_apply,
    scale_minmax,
    schema_from_json,
    schema_to_json,
    split_label,
    tables_equal,
    train_test_split,
)
from .errors import DataError, InvariantError, SchemaError
from .forest import (
    ForestModel,
    ForestParams,
    fit_forest,
    predict,
    predict_with_missing,
)
from .harness import (
    AggregateRow,
    ExperimentConfig,
    ExperimentReport,
    RunRecord,
    emit_report,
    load_experiment_config,
    resolve_dataset,
    run_experiment,
    save_experiment_config,
)
from .imputers import (
    IterationTrace,
    MiceParams,
    MissForestParams,
    SweepRecord,
    delta_categorical,
    delta_continuous,
    init_impute,
    mice_impute,
    missforest_impute,
    order_columns_by_missing,
)
from .strategies import (
    CbmiResult,
    Scenario,
    StackedTable,
    cbmi_predict,
    di_impute,
    iclf_predict,
    iul_impute,
    rf_missing_predict,
    stack_labels,
    unstack,
)
from .theory import (
    TheoremInstance,
    TheoremReport,
    compute_E,
    fit_ols_full,
    sample_instance,
    split_V,
    verify_theorem1,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnKind",
    "ColumnSchema",
    "DataTable",
    "LabelKind",
    "LabelVector",
    "MaskedMse",
    "MissingMask",
    "ScalingParams",
    "accuracy",
    "apply_mcar",
    "concat_rows",
    "labels_equal",
    "load_csv",
    "masked_mse",
    "save_csv",
    "scale_apply",
    "scale_minmax",
    "schema_from_json",
    "schema_to_json",
    "split_label",
    "tables_equal",
    "train_test_split",
    "DataError",
    "InvariantError",
    "SchemaError",
    "ForestModel",
    "ForestParams",
    "fit_forest",
    "predict",
    "predict_with_missing",
    "AggregateRow",
    "ExperimentConfig",
    "ExperimentReport",
    "RunRecord",
    "emit_report",
    "load_experiment_config",
    "resolve_dataset",
    "run_experiment",
    "save_experiment_config",
    "IterationTrace",
    "MiceParams",
    "MissForestParams",
    "SweepRecord",
    "delta_categorical",
    "delta_continuous",
    "init_impute",
    "mice_impute",
    "missforest_impute",
    "order_columns_by_missing",
    "CbmiResult",
    "Scenario",
    "StackedTable",
    "cbmi_predict",
    "di_impute",
    "iclf_predict",
    "iul_impute",
    "rf_missing_predict",
    "stack_labels",
    "unstack",
    "TheoremInstance",
    "TheoremReport",
    "compute_E",
    "fit_ols_full",
    "sample_instance",
    "split_V",
    "verify_theorem1",
    "__version__",
]
