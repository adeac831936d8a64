"""Command-line front end.

Subcommands: ``analyze`` (Steps 1-4 on a CSV file), ``simulate`` (a study
from a key=value config file), ``cv`` (the Step-1 lambda path) and
``version``.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .expectile import Dataset, check_tau
from .inference import (
    RankDeficientError,
    SingularCovarianceError,
    coefficient_table,
    confidence_intervals,
    debias,
    wald_test,
)
from .nodewise import DegenerateColumnError, nodewise_precision
from .regularizers import Regularizer
from .simulation import PRESETS, StudyConfig, StudyError, run_study, write_study_csv, write_study_json
from .solver import ConvergenceError, SolverOptions, cross_validate, fit_penalized_als

__all__ = ["main", "dispatch", "read_csv", "read_config", "UsageError", "DataError"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METHOD_KINDS = {"la-la": "lasso", "sc-sc": "scad", "la_la": "lasso", "sc_sc": "scad"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


NUMERIC_ERRORS = (
    ConvergenceError,
    SingularCovarianceError,
    DegenerateColumnError,
    FloatingPointError,
    ArithmeticError,
    np.linalg.LinAlgError,
    StudyError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# input


def read_csv(path):
    """Comma-separated numeric table with a header row; returns ``(names, matrix)``."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: file is empty")
    names = [h.strip() for h in rows[0]]
    seen = set()
    for i, nm in enumerate(names):
        if not nm:
            raise DataError(f"{path}: header column {i + 1} is empty")
        if nm in seen:
            raise DataError(f"{path}: duplicate header {nm!r} (column {i + 1})")
        seen.add(nm)
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    out = np.empty((len(body), len(names)))
    for ri, row in enumerate(body):
        if len(row) != len(names):
            raise DataError(f"{path}: data row {ri + 1} has {len(row)} fields, expected {len(names)}")
        for ci, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {ri + 1}, column {names[ci]!r}: {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {ri + 1}, column {names[ci]!r}: non-finite value {cell!r}")
            out[ri, ci] = v
    return names, out


def _parse_value(key, raw, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if key == "hypotheses":
            return tuple(tuple(int(c) for c in grp.split(",")) for grp in raw.split(";") if grp.strip())
        return raw
    except ValueError:
        raise DataError(f"config key {key!r}: cannot parse {raw!r}") from None


def read_config(path):
    """Flat ``key = value`` study file; keys are the :class:`StudyConfig` fields.

    ``hypotheses`` lists 1-based coordinate groups separated by ``;``,
    for example ``hypotheses = 1; 1,3,4``.  ``#`` starts a comment.
    """
    defaults = dataclasses.asdict(StudyConfig())
    py_types = {k: (type(v) if k != "hypotheses" else tuple) for k, v in defaults.items()}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    values = {}
    for no, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise DataError(f"{path}:{no}: expected 'key = value'")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key not in py_types:
            raise DataError(f"{path}:{no}: unknown key {key!r}")
        if key in values:
            raise DataError(f"{path}:{no}: key {key!r} given twice")
        values[key] = _parse_value(key, raw, py_types[key])
    try:
        return StudyConfig(**values)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# analysis


def _resolve_column(names, spec):
    if spec in names:
        return names.index(spec)
    try:
        idx = int(spec)
    except ValueError:
        raise DataError(f"column {spec!r} not found") from None
    if not 0 <= idx < len(names):
        raise DataError(f"column index {idx} out of range")
    return idx


def _design(args):
    names, table = read_csv(args.input)
    yi = _resolve_column(names, args.y)
    y = table[:, yi]
    xnames = [nm for i, nm in enumerate(names) if i != yi]
    x = np.delete(table, yi, axis=1)
    if x.shape[1] == 0:
        raise DataError("no covariates besides the response")
    center = np.zeros(x.shape[1])
    scale = np.ones(x.shape[1])
    if args.standardize:
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        flat = np.flatnonzero(scale == 0)
        if len(flat):
            raise DataError(f"column {xnames[flat[0]]!r} is constant; drop it or pass --no-standardize")
        x = (x - center) / scale
    if args.intercept:
        x = np.column_stack([np.ones(len(y)), x])
    try:
        data = Dataset(x, y)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    # map from fitted coefficients to coefficients on the raw covariates
    p = x.shape[1]
    names_out = (["(intercept)"] if args.intercept else []) + xnames
    back = np.eye(p)
    off = 1 if args.intercept else 0
    for j in range(len(xnames)):
        back[off + j, off + j] = 1.0 / scale[j]
        if args.intercept:
            back[0, off + j] = -center[j] / scale[j]
    pf = np.ones(p)
    if args.intercept and not args.penalize_intercept:
        pf[0] = 0.0
    return data, names_out, back, pf


def _hypotheses(args, names):
    tests = []
    for spec in args.test or []:
        cols = [c.strip() for c in spec.split(",") if c.strip()]
        if not cols:
            raise UsageError("empty --test specification")
        r = np.zeros((len(cols), len(names)))
        for row, c in enumerate(cols):
            if c not in names:
                raise DataError(f"--test names unknown column {c!r}")
            r[row, names.index(c)] = 1.0
        tests.append((",".join(cols), r, np.zeros(len(cols))))
    if args.test_matrix:
        hdr, tab = read_csv(args.test_matrix)
        if "c" not in hdr:
            raise DataError(f"{args.test_matrix}: needs a 'c' column for the right-hand side")
        r = np.zeros((tab.shape[0], len(names)))
        for ci, h in enumerate(hdr):
            if h == "c":
                continue
            if h not in names:
                raise DataError(f"{args.test_matrix}: unknown column {h!r}")
            r[:, names.index(h)] = tab[:, ci]
        tests.append((os.path.basename(args.test_matrix), r, tab[:, hdr.index("c")]))
    return tests


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _analyze_one(data, tau, args, names, back, pf, tests):
    kind = METHOD_KINDS[args.method]
    opts = SolverOptions(lla_stages=args.lla_stages)
    if args.lam is not None:
        fit = fit_penalized_als(data, tau, Regularizer(kind, args.lam, args.scad_a), opts, pf)
        lam = args.lam
    else:
        cv = cross_validate(data, tau, kind, folds=args.folds, seed=args.seed, opts=opts, a=args.scad_a, penalty_factor=pf)
        fit, lam = cv.fit, cv.lambda_star
    pe = nodewise_precision(data, fit, kind, lambdas=args.lam_node, a=args.scad_a, seed=args.seed,
                            cv_folds=args.folds, allow_jitter=args.allow_jitter)
    dr = debias(data, fit, pe).transformed(back, names)
    z, pv = coefficient_table(dr)
    lo, hi, _ = confidence_intervals(dr, args.alpha)
    coefs = []
    for j, nm in enumerate(names):
        coefs.append(
            {
                "name": nm,
                "estimate": _num(dr.beta_hat[j]),
                "debiased": _num(dr.beta_de[j]),
                "se": _num(dr.se[j]),
                "z": _num(z[j]),
                "p_value": _num(pv[j]),
                "ci_lower": _num(lo[j]),
                "ci_upper": _num(hi[j]),
            }
        )
    rows = []
    for label, r, c in tests:
        wt = wald_test(dr, r, c, alphas=(args.alpha,), on_degenerate="flag")
        rows.append(
            {
                "test": label,
                "statistic": _num(wt.statistic),
                "df": wt.df,
                "p_value": _num(wt.p_value),
                "reject": wt.reject_at[args.alpha],
                "degenerate": wt.degenerate,
            }
        )
    return {
        "tau": tau,
        "lambda": float(lam),
        "lambda_node": float(pe.lambdas[0]),
        "converged": bool(fit.converged),
        "coefficients": coefs,
        "tests": rows,
    }


def _summary_csv(report):
    lines = ["kind,tau,name,estimate,debiased,se,z,p_value,statistic,df"]

    def f(v):
        return "" if v is None else repr(v)

    for res in report["results"]:
        for c in res["coefficients"]:
            lines.append(",".join(["coef", repr(res["tau"]), c["name"], f(c["estimate"]), f(c["debiased"]),
                                   f(c["se"]), f(c["z"]), f(c["p_value"]), "", ""]))
        for t in res["tests"]:
            lines.append(",".join(["test", repr(res["tau"]), '"' + t["test"] + '"', "", "", "", "",
                                   f(t["p_value"]), f(t["statistic"]), str(t["df"])]))
    return "\n".join(lines) + "\n"


def _taus(text):
    try:
        return [check_tau(float(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--tau: {exc}") from None


def cmd_analyze(args):
    taus = _taus(args.tau)
    data, names, back, pf = _design(args)
    tests = _hypotheses(args, names)
    report = {
        "version": __version__,
        "input": os.path.basename(args.input),
        "response": args.y,
        "n": data.n,
        "p": data.p,
        "method": args.method,
        "standardized": bool(args.standardize),
        "intercept": bool(args.intercept),
        "alpha": args.alpha,
        "seed": args.seed,
        "results": [_analyze_one(data, tau, args, names, back, pf, tests) for tau in taus],
    }
    text = json.dumps(report, indent=1, allow_nan=False) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        base = args.output[:-5] if args.output.endswith(".json") else args.output
        with open(base + ".csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(_summary_csv(report))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cv(args):
    taus = _taus(args.tau)
    data, names, back, pf = _design(args)
    kind = METHOD_KINDS[args.method]
    lines = ["tau,lambda,cv_mean,cv_se,selected"]
    for tau in taus:
        cv = cross_validate(data, tau, kind, folds=args.folds, seed=args.seed,
                            opts=SolverOptions(lla_stages=args.lla_stages), a=args.scad_a, penalty_factor=pf)
        for row in cv.table():
            sel = int(row["lambda"] == cv.lambda_star)
            lines.append(f"{tau!r},{row['lambda']!r},{row['cv_mean']!r},{row['cv_se']!r},{sel}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    if bool(args.config) == bool(args.preset):
        raise UsageError("simulate needs exactly one of --config or --preset")
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; see --list-presets")
        cfg = PRESETS[args.preset]
    else:
        cfg = read_config(args.config)
    over = {}
    if args.replicates is not None:
        over["replicates"] = args.replicates
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        try:
            cfg = dataclasses.replace(cfg, **over)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    res = run_study(cfg, workers=args.threads)
    prefix = args.output
    write_study_csv(res, prefix + ".csv")
    write_study_json(res, prefix + ".json")
    for nm, rate in res.rejection_rates.items():
        print(f"{nm}: rejection rate {rate:.4f} ({res.rejections[nm]}/{cfg.replicates})", file=sys.stderr)
    return EXIT_OK


def cmd_version(args):
    print(__version__)
    return EXIT_OK


def cmd_presets(args):
    for name in sorted(PRESETS):
        print(name)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="debiased-expectile", description="De-biased inference for high-dimensional expectile regression.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--input", required=True, help="CSV file with a header row")
        sp.add_argument("--y", required=True, help="response column (name or 0-based index)")
        sp.add_argument("--tau", default="0.5", help="comma-separated expectile levels")
        sp.add_argument("--method", default="la-la", choices=sorted(set(METHOD_KINDS)))
        sp.add_argument("--folds", type=int, default=10)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--lla-stages", type=int, default=0)
        sp.add_argument("--scad-a", type=float, default=3.7)
        sp.add_argument("--no-standardize", dest="standardize", action="store_false")
        sp.add_argument("--no-intercept", dest="intercept", action="store_false")
        sp.add_argument("--penalize-intercept", action="store_true")
        sp.add_argument("--output", help="output path (stdout if omitted)")

    a = sub.add_parser("analyze", help="fit, de-bias and test on a CSV file")
    data_args(a)
    a.add_argument("--test", action="append", help="comma-separated column names tested jointly as zero")
    a.add_argument("--test-matrix", help="CSV of restriction rows: one column per coefficient name plus 'c'")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--lambda", dest="lam", type=float, help="fixed Step-1 lambda instead of CV")
    a.add_argument("--lambda-node", dest="lam_node", type=float, help="fixed node-wise lambda instead of CV")
    a.add_argument("--allow-jitter", action="store_true", help="continue past degenerate node-wise columns")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("cv", help="cross-validation table for the Step-1 lambda")
    data_args(c)
    c.set_defaults(func=cmd_cv)

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--config", help="key = value study file")
    s.add_argument("--preset", help="named built-in study")
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--output", default="study", help="output prefix; writes PREFIX.csv and PREFIX.json")
    s.add_argument("--threads", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("presets", help="list built-in study presets")
    pr.set_defaults(func=cmd_presets)

    v = sub.add_parser("version", help="print the package version")
    v.set_defaults(func=cmd_version)
    return p


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (analyze, simulate, cv, presets, version)")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        if hasattr(args, "alpha") and not 0 < args.alpha < 1:
            raise UsageError("--alpha must lie in (0, 1)")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RankDeficientError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    return dispatch(sys.argv[1:] if argv is None else argv)
