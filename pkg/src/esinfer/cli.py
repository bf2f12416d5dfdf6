"""Command-line interface: ``esinfer fit|test|simulate``.

Exit codes: 0 success, 2 input or usage error, 3 fitting failure,
4 ill-conditioned score covariance, 5 unstable bootstrap or simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import bootstrap_cov, estimate_psi, wald_covariance
from .errors import (
    CapExceededError,
    ConditioningError,
    EsInferError,
    InputError,
    InversionError,
    StabilityError,
)
from .es import fit_two_step
from .inference import Partition, _ScoreEngine, score_ci, wald_ci, wald_test
from .model import Dataset, SpecFamily, Tail, TauLevel
from .simulation import Method, ScenarioConfig, null_eta, run_monte_carlo

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FIT = 3
EXIT_CONDITIONING = 4
EXIT_UNSTABLE = 5

REPORT_COLUMNS = (
    "scenario", "n_per_group", "tau", "eta", "truth", "method", "rejection_rate",
    "coverage", "avg_ci_length", "mc_standard_error", "failures", "successes",
)
CURVE_COLUMNS = ("method", "eta", "truth", "power", "mc_standard_error")


def _fmt(x: float) -> float | None:
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.10g}")


def _clean(obj):
    """Round every float to 10 significant digits; NaN and infinities become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        f = _fmt(v)
        return "" if f is None else repr(f)
    return str(v)


def write_csv(path: Path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_cell(r[c]) for c in columns])


# -- input -------------------------------------------------------------------

def _split_names(text: str | None) -> list[str]:
    if text is None:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def read_design(path, response: str, covariates: list[str] | None = None):
    """Parse a numeric CSV into ``(y, X, column_names)`` with an intercept prepended.

    Only the response and covariate columns are parsed; by default every
    other column is a covariate. Errors name the file line and column.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        except csv.Error as exc:
            raise InputError(f"{path}, line 1: {exc}") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise InputError(f"response column {response!r} not found in header of {path}")
        if covariates is None:
            covariates = [h for h in header if h != response]
        for c in covariates:
            if c not in header:
                raise InputError(f"covariate column {c!r} not found in header of {path}")
        if response in covariates:
            raise InputError(f"column {response!r} is both response and covariate")
        wanted = [response] + list(covariates)
        idx = [header.index(c) for c in wanted]
        rows = []
        try:
            for rec in reader:
                line = reader.line_num
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != len(header):
                    raise InputError(
                        f"{path}, line {line}: expected {len(header)} fields, got {len(rec)}"
                    )
                vals = []
                for name, j in zip(wanted, idx):
                    cell = rec[j].strip()
                    try:
                        v = float(cell)
                    except ValueError:
                        raise InputError(
                            f"{path}, line {line}, column {name!r}: cannot parse {cell!r} as a number"
                        ) from None
                    if not math.isfinite(v):
                        raise InputError(
                            f"{path}, line {line}, column {name!r}: non-finite value {cell!r}"
                        )
                    vals.append(v)
                rows.append(vals)
        except csv.Error as exc:
            raise InputError(f"{path}, line {reader.line_num}: {exc}") from None
    if not rows:
        raise InputError(f"{path} has a header but no data rows")
    arr = np.array(rows, dtype=float)
    y = arr[:, 0]
    X = np.column_stack([np.ones(arr.shape[0]), arr[:, 1:]])
    return y, X, ("(Intercept)",) + tuple(covariates)


def read_csv(path, response: str, covariates: list[str] | None = None) -> Dataset:
    y, X, names = read_design(path, response, covariates)
    return Dataset(y, X, names)


# -- commands ----------------------------------------------------------------

def _tau(args) -> TauLevel:
    return TauLevel(args.tau, Tail(args.tail))


def _family(args) -> SpecFamily:
    return SpecFamily(args.family)


def _methods(text: str) -> list[Method]:
    out = []
    for t in _split_names(text):
        m = Method.parse(t)
        if m not in out:
            out.append(m)
    if not out:
        raise InputError("no methods given")
    return out


def _named(values, names):
    return {n: float(v) for n, v in zip(names, values)}


def _seed_value(seed: int) -> int:
    if seed < 0:
        raise InputError("seed must be non-negative")
    return seed


def _check_level(level: float):
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")


def _covariance_for(fit, method: Method, args, data, psi_cache):
    if method is Method.BOOT:
        return bootstrap_cov(data, fit.tau, fit.family, args.B, seed=_seed_value(args.seed),
                             workers=args.threads)
    kind = "iid" if method in (Method.W_IID, Method.S_IID) else "nid"
    if kind not in psi_cache:
        psi_cache[kind] = estimate_psi(fit, kind)
    return wald_covariance(fit, psi_cache[kind])


def cmd_fit(args) -> dict:
    data = read_csv(args.input, args.response, _split_names(args.covariates) or None)
    fit = fit_two_step(data, _tau(args), _family(args))
    names = data.column_names
    se = {}
    diagnostics = {
        "quantile_iterations": fit.qfit.iterations,
        "quantile_objective": fit.qfit.objective,
        "es_iterations": fit.es.iterations,
        "es_gradient_norm": fit.es.gradient_norm,
        "shift": fit.shift,
    }
    psi_cache = {}
    for m in _methods(args.methods):
        if m in (Method.S_IID, Method.S_NID):
            # score methods give tests and intervals, not standard errors
            continue
        cov = _covariance_for(fit, m, args, data, psi_cache)
        se[m.value] = _named(cov.se, names)
        if m is Method.BOOT:
            diagnostics["bootstrap_dropped"] = cov.diagnostics["dropped"]
            diagnostics["bootstrap_B"] = cov.diagnostics["B"]
    return {
        "command": "fit",
        "n": data.n,
        "p": data.p,
        "tau": fit.tau.tau,
        "tail": fit.tau.tail.value,
        "family": fit.family.value,
        "columns": list(names),
        "theta_q": _named(fit.theta_q, names),
        "theta_e": _named(fit.theta_e, names),
        "se": se,
        "diagnostics": diagnostics,
    }


def cmd_test(args) -> dict:
    covs = _split_names(args.covariates) or None
    data = read_csv(args.input, args.response, covs)
    tested = _split_names(args.test_cols)
    if not tested:
        raise InputError("--test-cols is required for the test command")
    names = data.column_names
    for t in tested:
        if t == names[0]:
            raise InputError("the intercept cannot be tested")
        if t not in names:
            raise InputError(f"tested column {t!r} is not among the model covariates {list(names[1:])}")
    cols = [data.column_index(t) for t in tested]
    _check_level(args.level)
    fit = fit_two_step(data, _tau(args), _family(args))
    psi_cache = {}
    methods = {}
    for m in _methods(args.methods):
        block = {"coefficients": {}}
        if m in (Method.S_IID, Method.S_NID):
            kind = "iid" if m is Method.S_IID else "nid"
            if kind not in psi_cache:
                psi_cache[kind] = estimate_psi(fit, kind)
            psi = psi_cache[kind]
            wcov = wald_covariance(fit, psi)
            for name, c in zip(tested, cols):
                res = _ScoreEngine(fit, Partition.testing(data.p, [c]), psi).result(0.0)
                iv = score_ci(fit, c, psi, args.level, wald=wald_ci(wcov, fit.theta_e, c, args.level))
                block["coefficients"][name] = {
                    "estimate": fit.theta_e[c], "statistic": res.t_n, "df": res.df,
                    "p_value": res.p_value, "ci": [iv.lower, iv.upper],
                }
            if len(cols) > 1:
                res = _ScoreEngine(fit, Partition.testing(data.p, cols), psi).result(0.0)
                block["joint"] = {"statistic": res.t_n, "df": res.df, "p_value": res.p_value}
        else:
            cov = _covariance_for(fit, m, args, data, psi_cache)
            for name, c in zip(tested, cols):
                wt = wald_test(cov, fit.theta_e, [c])
                iv = wald_ci(cov, fit.theta_e, c, args.level)
                block["coefficients"][name] = {
                    "estimate": fit.theta_e[c], "statistic": wt.statistic, "df": wt.df,
                    "p_value": wt.p_value, "ci": [iv.lower, iv.upper],
                }
            if len(cols) > 1:
                wt = wald_test(cov, fit.theta_e, cols)
                block["joint"] = {"statistic": wt.statistic, "df": wt.df, "p_value": wt.p_value}
        methods[m.value] = block
    return {
        "command": "test",
        "n": data.n,
        "tau": fit.tau.tau,
        "tail": fit.tau.tail.value,
        "family": fit.family.value,
        "level": args.level,
        "tested": tested,
        "methods": methods,
    }


def _eta_grid(text: str, scenario, tau: TauLevel) -> list[float]:
    out = []
    for tok in _split_names(text):
        if tok.lower() == "null":
            out.append(null_eta(scenario, tau))
            continue
        try:
            v = float(tok)
        except ValueError:
            raise InputError(f"cannot parse eta value {tok!r}") from None
        if not math.isfinite(v):
            raise InputError("eta values must be finite")
        out.append(v)
    if not out:
        raise InputError("--eta needs at least one value")
    return out


def cmd_simulate(args) -> tuple[dict, int]:
    if args.scenario is None or args.n is None or args.reps is None:
        raise InputError("simulate requires --scenario, --n and --reps")
    if args.reps < 1:
        raise InputError(f"--reps must be at least 1, got {args.reps}")
    if args.tail != "upper":
        raise InputError("simulation scenarios are defined for the upper tail only")
    if args.out is None:
        raise InputError("simulate requires --out (an output directory)")
    _check_level(args.level)
    tau = _tau(args)
    etas = _eta_grid(args.eta, args.scenario, tau)
    base = ScenarioConfig(
        args.scenario, args.n, etas[0], tau, args.reps, _seed_value(args.seed),
        tuple(_methods(args.methods)), args.B, args.level, _family(args),
    )
    reports = [run_monte_carlo(replace(base, eta=e), workers=args.threads) for e in etas]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for rep in reports for r in rep.rows()]
    write_csv(out / "report.csv", REPORT_COLUMNS, rows)
    curve = [
        {"method": m.value, "eta": rep.config.eta, "truth": rep.truth,
         "power": rep.methods[m].rejection_rate,
         "mc_standard_error": rep.methods[m].mc_standard_error}
        for m in base.methods for rep in reports
    ]
    write_csv(out / "power_curve.csv", CURVE_COLUMNS, curve)
    valid = all(r.valid for r in reports)
    doc = {
        "command": "simulate",
        "scenario": base.scenario.name,
        "n_per_group": base.n_per_group,
        "tau": tau.tau,
        "tail": tau.tail.value,
        "family": base.family.value,
        "replications": base.replications,
        "seed": base.seed,
        "B": base.B,
        "level": base.level,
        "valid": valid,
        "flags": sorted({f for r in reports for f in r.flags}),
        "results": rows,
    }
    (out / "report.json").write_text(dump_json(doc), encoding="utf-8")
    return doc, (EXIT_OK if valid else EXIT_UNSTABLE)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esinfer", description="Expected shortfall regression and inference.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=("fit", "test", "simulate"))
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--response", help="response column")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--test-cols", dest="test_cols", help="comma-separated columns to test")
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--tail", choices=("lower", "upper"), default="upper")
    p.add_argument("--family", choices=("const", "logneg"), default="logneg")
    p.add_argument("--methods", default=None,
                   help="comma list of w-iid,w-nid,s-iid,s-nid,boot")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--B", type=int, default=None, help="bootstrap replicates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--scenario", default=None, help="simulation scenario 1-4")
    p.add_argument("--n", type=int, default=None, help="observations per treatment group")
    p.add_argument("--eta", default="0", help="effect size, comma grid, or 'null'")
    p.add_argument("--out", default=None, help="output file (fit/test) or directory (simulate)")
    p.add_argument("--threads", type=int, default=1)
    return p


def _defaults(args):
    if args.methods is None:
        args.methods = {
            "fit": "w-iid",
            "test": "w-iid,s-iid",
            "simulate": "w-iid,w-nid,s-iid,s-nid,boot",
        }[args.command]
    if args.B is None:
        args.B = 200 if args.command == "simulate" else 1000
    if args.threads < 1:
        raise InputError("--threads must be at least 1")
    if args.command in ("fit", "test"):
        if not args.input or not args.response:
            raise InputError(f"{args.command} requires --input and --response")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _defaults(args)
        if args.command == "simulate":
            doc, code = cmd_simulate(args)
            for r in doc["results"]:
                print(f"{r['method']:<6} eta={r['eta']:<8.4g} reject={r['rejection_rate']:.4f} "
                      f"cover={r['coverage']:.4f} length={r['avg_ci_length']:.4f} "
                      f"fail={r['failures']}")
            if code:
                print("error: too many failed replicates; report flagged invalid", file=sys.stderr)
            return code
        doc = cmd_fit(args) if args.command == "fit" else cmd_test(args)
        text = dump_json(doc)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConditioningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONDITIONING
    except (StabilityError, CapExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (EsInferError, InversionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
