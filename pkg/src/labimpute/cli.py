"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 bad input data or config,
3 violated internal guarantee.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from ._rng import make_rng
from .data import (
    apply_mcar,
    load_csv,
    save_csv,
    split_label,
)
from .errors import DataError, InvariantError
from .forest import ForestParams
from .harness import emit_report, load_experiment_config, run_experiment
from .imputers import (
    MiceParams,
    MissForestParams,
    mice_impute,
    missforest_impute,
)
from .strategies import cbmi_predict, stack_labels
from .theory import sample_instance, verify_theorem1

_THEOREM_TAG = 909090


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # return a usage exit code instead of letting argparse kill the process
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="master random seed (default 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads where supported (default 1)")
    common.add_argument("--out-dir", default=".",
                        help="directory for output files (default .)")

    parser = _Parser(
        prog="labimpute",
        description="Random-forest imputation and classification-by-imputation "
                    "for tables with missing values.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser(
        "simulate", parents=[common],
        help="knock out a uniform random fraction of cells in a complete CSV",
    )
    p.add_argument("input", help="complete input CSV")
    p.add_argument("--rate", type=float, required=True,
                   help="fraction of cells to blank, in [0, 1)")

    p = sub.add_parser(
        "impute", parents=[common],
        help="fill every missing cell of a CSV",
    )
    p.add_argument("input", help="input CSV with missing cells")
    p.add_argument("--method", choices=("missforest", "mice"),
                   default="missforest")
    p.add_argument("--strategy", choices=("di", "iul"), default="di",
                   help="di: impute the table as is; iul: stack the label "
                        "column in as an extra feature first")
    p.add_argument("--label", default="",
                   help="label column name (required for --strategy iul)")
    p.add_argument("--trees", type=int, default=100,
                   help="trees per forest (missforest only)")
    p.add_argument("--max-iter", type=int, default=10,
                   help="sweep limit (missforest only)")
    p.add_argument("--n-iter", type=int, default=10,
                   help="sweep count (mice only)")
    p.add_argument("--ridge", type=float, default=1e-8,
                   help="ridge penalty (mice only)")

    p = sub.add_parser(
        "cbmi", parents=[common],
        help="classify test rows by imputing their blanked-out labels "
             "jointly with the training rows",
    )
    p.add_argument("--train", required=True, help="training CSV with labels")
    p.add_argument("--test", required=True, help="test CSV without the label column")
    p.add_argument("--label", required=True, help="label column in the training CSV")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-iter", type=int, default=10)

    p = sub.add_parser(
        "experiment", parents=[common],
        help="run a configured experiment and write its result tables",
    )
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--formats", default="csv,json",
                   help="comma-separated output formats (csv,json)")

    p = sub.add_parser(
        "theorem-check", parents=[common],
        help="verify the label-stacking error decomposition on random instances",
    )
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--n-min", type=int, default=5)
    p.add_argument("--n-max", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)

    return parser


def _cmd_simulate(args) -> int:
    table = load_csv(args.input)
    masked, mask = apply_mcar(table, args.rate, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(masked, out / "masked.csv")
    with open(out / "mask.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("row", "col"))
        for r, c in zip(mask.rows, mask.cols):
            writer.writerow((int(r), int(c)))
    print(f"masked {mask.count} of {table.n_rows * table.n_cols} cells "
          f"-> {out / 'masked.csv'}")
    return 0


def _cmd_impute(args) -> int:
    table = load_csv(args.input)
    if args.method == "missforest":
        params = MissForestParams(
            forest=ForestParams(n_trees=args.trees),
            max_iter=args.max_iter,
            seed=args.seed,
        )
    else:
        params = MiceParams(n_iter=args.n_iter, ridge=args.ridge)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = None
    if args.strategy == "iul":
        if not args.label:
            raise DataError("--strategy iul needs --label")
        x, y = split_label(table, args.label)
        stacked = stack_labels(x, y)
        # the completed table keeps the label as its last column
        if args.method == "missforest":
            completed, trace = missforest_impute(stacked.table, params)
        else:
            completed = mice_impute(stacked.table, params)
        save_csv(completed, out / "imputed.csv")
    else:
        if args.method == "missforest":
            completed, trace = missforest_impute(table, params)
        else:
            completed = mice_impute(table, params)
        save_csv(completed, out / "imputed.csv")
    if trace is not None:
        trace.to_csv(out / "trace.csv")
        print(f"imputed -> {out / 'imputed.csv'} "
              f"({len(trace.sweeps)} sweeps, stopped: {trace.stop_reason})")
    else:
        print(f"imputed -> {out / 'imputed.csv'}")
    return 0


def _cmd_cbmi(args) -> int:
    train = load_csv(args.train)
    test = load_csv(args.test)
    x_train, y_train = split_label(train, args.label)
    params = MissForestParams(
        forest=ForestParams(n_trees=args.trees),
        max_iter=args.max_iter,
        seed=args.seed,
    )
    res = cbmi_predict(x_train, y_train, test, params)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((args.label,))
        for idx in res.y_pred.as_ints():
            writer.writerow((res.y_pred.categories[idx],))
    print(f"predicted {res.y_pred.n} labels -> {path}")
    return 0


def _cmd_experiment(args) -> int:
    config = load_experiment_config(args.config)
    formats = tuple(f for f in args.formats.split(",") if f)
    report = run_experiment(config, threads=args.threads)
    paths = emit_report(report, args.out_dir, formats=formats)
    n_err = sum(1 for r in report.records if r.status != "ok")
    note = f", {n_err} failed" if n_err else ""
    print(f"{len(report.records)} runs{note} -> " + ", ".join(map(str, paths)))
    return 0


def _cmd_theorem_check(args) -> int:
    if args.instances < 1:
        raise DataError("--instances must be >= 1")
    if not (3 <= args.n_min <= args.n_max):
        raise DataError("need 3 <= --n-min <= --n-max")
    rng = make_rng(args.seed, _THEOREM_TAG)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theorem_reports.csv"
    worst = 0.0
    wins = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((
            "instance", "n", "gamma_intercept", "gamma_feature", "gamma_label",
            "v_plus", "v_minus", "sse_with_label", "sse_without_label",
            "identity_residual", "stacking_wins",
        ))
        for i in range(args.instances):
            n = int(rng.integers(args.n_min, args.n_max + 1))
            inst = sample_instance(rng, n)
            rep = verify_theorem1(inst, tol=args.tol)
            worst = max(worst, rep.identity_residual)
            wins += rep.iul_wins
            writer.writerow((
                i, n,
                f"{rep.gamma[0]:.6g}", f"{rep.gamma[1]:.6g}", f"{rep.gamma[2]:.6g}",
                f"{rep.v_plus:.6g}", f"{rep.v_minus:.6g}",
                f"{rep.sse_iul:.6g}", f"{rep.sse_di:.6g}",
                f"{rep.identity_residual:.6g}", rep.iul_wins,
            ))
    print(f"verified {args.instances} instances "
          f"(worst residual {worst:.3g}, stacking won {wins}) -> {path}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "impute": _cmd_impute,
    "cbmi": _cmd_cbmi,
    "experiment": _cmd_experiment,
    "theorem-check": _cmd_theorem_check,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli_main())
