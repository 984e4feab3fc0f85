"""Command-line front end: ``icsmarginal {estimate,test,regress,simulate,diagnose}``.

Reports go to standard output as JSON (default) or CSV; warnings and the
generated seed (when ``--seed`` is omitted) go to standard error.  Exit
status is 0 on success, 1 on a data or numerical error and 2 on a usage
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import secrets
import sys
import time
import warnings
from collections.abc import Sequence
from typing import Any

import numpy as np

from icsmarginal import functionals as fn
from icsmarginal import htests, regression, simulate
from icsmarginal.dataset import (
    ClusteredSample,
    CsvSchema,
    WeightingScheme,
    informativeness_diagnostic,
    load_long_csv,
    write_long_csv,
)
from icsmarginal.errors import ICSError

SIG_DIGITS = 12
STATS = ("mean", "var", "median", "hl", "trimmed", "cov", "corr")
TESTS = ("sign", "signed-rank", "t", "wcr")
METHODS = ("wcr", "ols", "icswls", "huber")


class UsageError(Exception):
    """Invalid combination of flags (exit status 2)."""


# -- output helpers --------------------------------------------------------------


class _Report:
    def __init__(self, argv: Sequence[str]) -> None:
        self.argv = list(argv)
        self.warnings: list[str] = []
        self.started = time.perf_counter()

    def clean(self, value: Any, where: str = "") -> Any:
        """Round floats to 12 significant digits; non-finite numbers become "NA"."""
        if isinstance(value, dict):
            return {str(k): self.clean(v, f"{where}.{k}" if where else str(k)) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self.clean(v, where) for v in value]
        if isinstance(value, np.ndarray):
            return self.clean(value.tolist(), where)
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            x = float(value)
            if not math.isfinite(x):
                self.warnings.append(f"non-finite value reported as NA ({where or 'value'})")
                return "NA"
            return float(f"{x:.{SIG_DIGITS}g}")
        return value


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields: list[str] = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(v) for k, v in row.items()})
    return buf.getvalue()


def _csv_cell(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.{SIG_DIGITS}g}"
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(_csv_cell(x) for x in v)
    return str(v)


def _input_summary(sample: ClusteredSample) -> dict:
    return {
        "M": sample.n_clusters,
        "N": sample.n_obs,
        "size_distribution": {str(k): v for k, v in sample.size_distribution().items()},
    }


# -- argument parsing ------------------------------------------------------------


def _data_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("data", help="long-format CSV, one row per observation ('-' for stdin)")
    p.add_argument("--cluster-col", required=True)
    p.add_argument("--y-col", required=True)
    p.add_argument("--y2-col", help="second outcome column (cov/corr)")
    p.add_argument("--x-col", action="append", default=[], help="covariate column (repeatable)")
    p.add_argument("--censor-col", help="0/1 right-censoring flag column")
    p.add_argument("--drop-censored", action="store_true",
                   help="remove censored observations instead of failing")
    p.add_argument("--delimiter", default=",")
    return p


def _common_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--seed", type=int, default=None)
    return p


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icsmarginal",
        description="Marginal inference for clustered data with informative cluster size.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    data, common = _data_parent(), _common_parent()

    est = sub.add_parser("estimate", parents=[data, common], help="marginal functionals")
    est.add_argument("--stat", choices=STATS, action="append",
                     help="functional to estimate (repeatable; default mean)")
    est.add_argument("--scheme", default="ics", choices=[s.value for s in WeightingScheme])
    est.add_argument("--alpha", type=_probability, default=0.1, help="trimming fraction")
    est.add_argument("--covariance", default="correct",
                     choices=[c.value for c in fn.CovarianceEstimator])
    est.add_argument("--hl-variant", default="ics",
                     choices=[v.value for v in fn.HodgesLehmannVariant])

    tst = sub.add_parser("test", parents=[data, common], help="one-sample tests")
    tst.add_argument("--test", choices=TESTS, action="append",
                     help="test to run (repeatable; default sign, signed-rank and t)")
    tst.add_argument("--statistic", default="mean", choices=("mean", "sign", "signed-rank", "t"),
                     help="i.i.d. statistic for the resampling test")
    tst.add_argument("--theta0", type=float, default=0.0)
    tst.add_argument("--variance", default=None, choices=("analytic", "mc", "bootstrap"))
    tst.add_argument("--replicates", type=_positive_int, default=1000)
    tst.add_argument("--alternative", default="two-sided", choices=("two-sided", "greater", "less"))

    reg = sub.add_parser("regress", parents=[data, common], help="marginal linear regression")
    group = reg.add_mutually_exclusive_group()
    group.add_argument("--method", choices=METHODS, default="icswls")
    group.add_argument("--compare", action="store_true", help="fit all four methods side by side")
    reg.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True)
    reg.add_argument("--replicates", type=_positive_int, default=1000)
    reg.add_argument("--c", type=float, default=1.5, help="Huber tuning constant")
    reg.add_argument("--d", type=float, default=1.0, help="Huber scale constant")
    reg.add_argument("--max-iter", type=_positive_int, default=200)

    sim = sub.add_parser("simulate", parents=[common], help="generate data or a bias sweep")
    sim.add_argument("--mechanism", required=True, choices=[m.value for m in simulate.Mechanism])
    sim.add_argument("--M", type=_positive_int, default=100)
    sim.add_argument("--na", type=_positive_int, default=5)
    sim.add_argument("--nb", type=_positive_int, default=50)
    sim.add_argument("--followup-c", type=float, default=2.0)
    sim.add_argument("--gap", choices=("exponential", "fixed"), default="exponential")
    sim.add_argument("--rate", type=float, default=1.0)
    sim.add_argument("--gap-value", type=float, default=1.0)
    sim.add_argument("--a", type=float, default=0.5)
    sim.add_argument("--b", type=float, default=1.0)
    sim.add_argument("--n-min", type=_positive_int, default=1)
    sim.add_argument("--n-max", type=_positive_int, default=10)
    sim.add_argument("--slope", type=float, default=0.25)
    sim.add_argument("--beta", type=float, nargs=2, default=(1.0, 2.0))
    sim.add_argument("--sweep", action="store_true", help="bias sweep instead of one dataset")
    sim.add_argument("--M-values", type=_positive_int, nargs="+", default=[10, 20, 50, 100, 200])
    sim.add_argument("--replications", type=_positive_int, default=1000)
    sim.add_argument("--estimators", nargs="+", default=["first", "ics", "naive"],
                     choices=[s.value for s in WeightingScheme])
    sim.add_argument("--output", help="write the dataset CSV here instead of standard output")

    diag = sub.add_parser("diagnose", parents=[data, common], help="informativeness diagnostic")
    diag.add_argument("--grid", type=float, nargs="+", help="outcome values for the ECDF columns")
    diag.add_argument("--min-clusters", type=_positive_int, default=2)
    return parser


# -- subcommands -----------------------------------------------------------------


def _load(args: argparse.Namespace, intercept: bool = False) -> ClusteredSample:
    ys = (args.y_col,) if not args.y2_col else (args.y_col, args.y2_col)
    schema = CsvSchema(
        cluster=args.cluster_col, y=ys, x=tuple(args.x_col), censored=args.censor_col,
        intercept=intercept,
    )
    source = sys.stdin if args.data == "-" else args.data
    sample = load_long_csv(source, schema, delimiter=args.delimiter)
    if sample.censored is not None and args.drop_censored:
        sample = sample.drop_censored()
    return sample


def _estimate_record(sample: ClusteredSample, stat: str, args: argparse.Namespace) -> dict:
    scheme = WeightingScheme.parse(args.scheme)
    if stat in ("cov", "corr") and sample.outcome_dim != 2:
        raise UsageError(f"--stat {stat} needs --y2-col")
    if stat not in ("cov", "corr") and sample.outcome_dim != 1:
        raise UsageError(f"--stat {stat} needs a single outcome column")
    label = args.scheme
    if stat == "mean":
        est = fn.marginal_mean(sample, scheme)
    elif stat == "var":
        est = fn.marginal_variance(sample, scheme)
    elif stat == "median":
        est = fn.weighted_median(sample, scheme)
    elif stat == "trimmed":
        est = fn.trimmed_mean(sample, args.alpha)
        label = "ics"
    elif stat == "hl":
        est = fn.hodges_lehmann(sample, args.hl_variant)
        label = args.hl_variant
    elif stat == "cov":
        est = fn.marginal_covariance(sample, args.covariance)
        label = args.covariance
    else:
        est = fn.marginal_correlation(sample)
        label = "ics"
    record = {"stat": stat, "scheme": label, "value": est.value, "std_error": est.std_error}
    if stat == "trimmed":
        record["alpha"] = args.alpha
    return record


def _cmd_estimate(args: argparse.Namespace, report: _Report) -> tuple[dict, list[dict], None]:
    sample = _load(args)
    stats = args.stat or ["mean"]
    rows = []
    for stat in stats:
        try:
            rows.append(_estimate_record(sample, stat, args))
        except ICSError as exc:
            raise ICSError(f"estimate --stat {stat}: {exc}") from exc
    return _input_summary(sample), rows, None


def _test_record(result: htests.TestResult, name: str) -> dict:
    return {
        "test": name,
        "method": result.method,
        "statistic": result.statistic,
        "variance": result.variance,
        "standardized": result.standardized,
        "reference": result.reference.value,
        "p_value": result.p_value,
        "n_clusters": result.n_clusters,
        "B": result.B,
    }


def _cmd_test(args: argparse.Namespace, report: _Report) -> tuple[dict, list[dict], int | None]:
    sample = _load(args)
    tests = args.test or ["sign", "signed-rank", "t"]
    seed = None
    rows = []
    for name in tests:
        if name == "sign":
            if args.variance not in (None, "analytic"):
                raise UsageError("the sign test supports only --variance analytic")
            res = htests.sign_test(sample, args.theta0)
        elif name == "signed-rank":
            var = args.variance or "analytic"
            if var == "mc":
                raise UsageError("the signed-rank test supports --variance analytic or bootstrap")
            if var == "bootstrap":
                seed = _seed(args)
            res = htests.signed_rank_test(sample, args.theta0, var, args.replicates, seed or 0)
        elif name == "t":
            if args.variance not in (None, "analytic"):
                raise UsageError("the modified t test supports only --variance analytic")
            res = htests.modified_t_test(sample, args.theta0, args.alternative)
        else:
            seed = _seed(args)
            res = htests.wcr_test(
                sample, args.statistic, B=args.replicates,
                variance_method=args.variance or "mc", seed=seed, theta0=args.theta0,
                alternative=args.alternative,
            )
            name = f"wcr-{args.statistic}"
        report.warnings.extend(res.warnings)
        rows.append(_test_record(res, name))
    return _input_summary(sample), rows, seed


def _fit(sample: ClusteredSample, method: str, args: argparse.Namespace, seed: int) -> regression.RegressionFit:
    if method == "icswls":
        return regression.icswls_fit(sample)
    if method == "ols":
        return regression.ols_fit(sample)
    if method == "huber":
        cfg = regression.HuberConfig(c=args.c, d=args.d, max_iter=args.max_iter)
        return regression.huber_icw_fit(sample, cfg)
    return regression.wcr_regression(sample, B=args.replicates, seed=seed)


def _cmd_regress(args: argparse.Namespace, report: _Report) -> tuple[dict, Any, int | None]:
    if not args.x_col and not args.intercept:
        raise UsageError("regress needs at least one --x-col or --intercept")
    sample = _load(args, intercept=args.intercept)
    if sample.outcome_dim != 1:
        raise UsageError("regress takes a single outcome column")
    methods = list(METHODS) if args.compare else [args.method]
    seed = _seed(args) if "wcr" in methods else None
    fits = {}
    for method in methods:
        try:
            fit = _fit(sample, method, args, seed or 0)
        except ICSError as exc:
            raise ICSError(f"regress --method {method}: {exc}") from exc
        report.warnings.extend(f"{method}: {w}" for w in fit.warnings)
        fits[method] = fit
    rows = []
    for k, name in enumerate(sample.x_names):
        row: dict[str, Any] = {"parameter": name}
        for method, fit in fits.items():
            row[f"{method}_estimate"] = float(fit.beta[k])
            row[f"{method}_se"] = float(fit.std_errors[k])
            if fit.mc_std_errors is not None:
                row[f"{method}_mc_se"] = float(fit.mc_std_errors[k])
        rows.append(row)
    return _input_summary(sample), rows, seed


def _generator_spec(args: argparse.Namespace, seed: int) -> simulate.GeneratorSpec:
    params = {
        "n_a": args.na, "n_b": args.nb, "followup_c": args.followup_c,
        "gap_distribution": args.gap, "rate": args.rate, "gap_value": args.gap_value,
        "a": args.a, "b": args.b, "n_min": args.n_min, "n_max": args.n_max,
        "slope": args.slope, "beta": tuple(args.beta),
    }
    return simulate.GeneratorSpec(args.mechanism, args.M, params, seed)


def _cmd_simulate(args: argparse.Namespace, report: _Report) -> tuple[dict | None, Any, int]:
    seed = _seed(args)
    spec = _generator_spec(args, seed)
    if args.sweep:
        if args.replications < 100:
            raise UsageError("--replications must be at least 100")
        rows = [
            {"M": r.M, "estimator": r.estimator, "mean": r.mean, "mc_se": r.mc_se,
             "replications": r.replications}
            for r in simulate.bias_sweep(spec, args.estimators, args.M_values, args.replications, seed)
        ]
        return None, rows, seed
    return None, simulate.generate(spec), seed


def _cmd_diagnose(args: argparse.Namespace, report: _Report) -> tuple[dict, list[dict], None]:
    sample = _load(args)
    diag = informativeness_diagnostic(sample, grid=args.grid, min_clusters=args.min_clusters)
    if diag.size_constant:
        report.warnings.append("all clusters have the same size; nothing to compare")
    return _input_summary(sample), diag.as_rows(), None


def _seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = secrets.randbelow(2**31)
        print(f"icsmarginal: no --seed given; using --seed {args.seed}", file=sys.stderr)
    return args.seed


_COMMANDS = {
    "estimate": _cmd_estimate,
    "test": _cmd_test,
    "regress": _cmd_regress,
    "simulate": _cmd_simulate,
    "diagnose": _cmd_diagnose,
}


def run(argv: Sequence[str] | None = None, stdout: Any = None, stderr: Any = None) -> int:
    """Run one command and return its exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    report = _Report(argv)
    saved = sys.stderr
    sys.stderr = stderr
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            summary, results, seed = _COMMANDS[args.command](args, report)
        report.warnings.extend(str(w.message) for w in caught)
    except UsageError as exc:
        print(f"icsmarginal {args.command}: error: {exc}", file=stderr)
        return 2
    except (ICSError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"icsmarginal {args.command}: error: {exc}", file=stderr)
        return 1
    finally:
        sys.stderr = saved

    fmt = args.format
    if args.command == "simulate" and isinstance(results, ClusteredSample):
        text = write_long_csv(results)
        if args.output:
            with open(args.output, "w", newline="", encoding="utf-8") as handle:
                handle.write(text)
        else:
            stdout.write(text)
        _flush_warnings(report, stderr)
        return 0
    if fmt is None:
        fmt = "csv" if args.command == "simulate" else "json"

    clean = report.clean(results, "results")
    if fmt == "csv":
        stdout.write(_csv_text(clean))
    else:
        payload = {
            "command": report.argv,
            "input": summary,
            "results": clean,
            "warnings": report.warnings,
            "seed": seed,
            "wall_time": round(time.perf_counter() - report.started, 6),
        }
        stdout.write(json.dumps(payload, indent=2) + "\n")
    _flush_warnings(report, stderr)
    return 0


def _flush_warnings(report: _Report, stderr: Any) -> None:
    for w in report.warnings:
        print(f"icsmarginal: warning: {w}", file=stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
