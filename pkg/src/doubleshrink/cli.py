"""Command-line interface.

Subcommands: ``estimate`` (stratum-summary CSV in, estimates and intervals
out), ``simulate`` (synthetic risk tables), ``coverage`` (synthetic coverage
and length tables), ``bootstrap`` (unit-level CSV in, bootstrap tables out).

Every command accepts a flat JSON config file via ``--config``; explicit
flags override file values.  All numeric output is serialized with 10
significant digits, CSV plus a JSON sidecar.  Exit codes: 0 success, 2 input
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import __version__, competitors
from .core import EstimatePair, FitMethod, Hyperparams, apply_weights, compute_weights
from .errors import InputValidationError, ShrinkageError, SolverError
from .hyper import UreOptions, fit_mle, fit_mm1, fit_mm2, fit_ure
from .inference import robust_intervals, truncate_hyperparams
from .simharness import (
    KNOWN_METHODS,
    SimConfig,
    aggregate_units,
    bootstrap_eval,
    evaluate_coverage,
    evaluate_risk,
    generate,
    pair_from_summaries,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_STRATUM_COLUMNS = ("stratum", "tau_u", "var_u", "tau_b", "var_b")
_UNIT_COLUMNS = ("stratum", "source", "arm", "outcome")


class CliInputError(Exception):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return "nan"
    return format(v, ".10g")


def _round_floats(obj):
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (bool, int, str)) or obj is None:
        return obj
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isnan(v) else float(format(v, ".10g"))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round_floats(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_paths(out: str) -> tuple[str, str]:
    base = out[:-4] if out.endswith(".csv") else out
    return base + ".csv", base + ".json"


def _read_csv_rows(path: str, required: tuple) -> list[dict]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliInputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CliInputError(f"{path}: empty file, expected header {','.join(required)}")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise CliInputError(f"{path}: missing column(s): {', '.join(missing)}")
        rows = []
        for row in reader:
            rows.append((reader.line_num, row))
    if not rows:
        raise CliInputError(f"{path}: no data rows")
    return rows


def _read_stratum_csv(path: str):
    rows = _read_csv_rows(path, _STRATUM_COLUMNS)
    labels, parsed = [], {"tau_u": [], "var_u": [], "tau_b": [], "var_b": []}
    for line_num, row in rows:
        labels.append(row["stratum"])
        for col in parsed:
            raw = row[col]
            try:
                value = float(raw)
            except (TypeError, ValueError):
                raise CliInputError(f"{path}:{line_num}: column {col} has non-numeric value {raw!r}")
            if not math.isfinite(value):
                raise CliInputError(f"{path}:{line_num}: column {col} must be finite")
            if col.startswith("var") and value <= 0:
                raise CliInputError(f"{path}:{line_num}: column {col} must be positive")
            parsed[col].append(value)
    try:
        pair = EstimatePair(parsed["tau_u"], parsed["tau_b"], parsed["var_u"], parsed["var_b"])
    except InputValidationError as exc:
        raise CliInputError(f"{path}: {exc}") from exc
    return labels, pair


def _read_unit_csv(path: str) -> list[dict]:
    rows = _read_csv_rows(path, _UNIT_COLUMNS)
    out = []
    for line_num, row in rows:
        if row["source"] not in ("rct", "obs"):
            raise CliInputError(f"{path}:{line_num}: source must be rct or obs, got {row['source']!r}")
        if row["arm"] not in ("treated", "control"):
            raise CliInputError(
                f"{path}:{line_num}: arm must be treated or control, got {row['arm']!r}"
            )
        try:
            outcome = float(row["outcome"])
        except (TypeError, ValueError):
            raise CliInputError(f"{path}:{line_num}: outcome has non-numeric value {row['outcome']!r}")
        if not math.isfinite(outcome):
            raise CliInputError(f"{path}:{line_num}: outcome must be finite")
        out.append(
            {"stratum": row["stratum"], "source": row["source"], "arm": row["arm"], "outcome": outcome}
        )
    return out


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliInputError(f"cannot open config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliInputError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliInputError(f"config {path} must be a flat JSON object")
    return cfg


_REQUIRED = object()


def _resolve(args, spec: dict) -> dict:
    """Merge flag values over config-file values over defaults."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, (convert, default) in spec.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, file_cfg.get(key.replace("_", "-")))
        if value is None:
            value = default
        if value is _REQUIRED:
            raise CliInputError(f"missing required option --{key.replace('_', '-')}")
        if value is not None:
            try:
                value = convert(value)
            except (TypeError, ValueError) as exc:
                raise CliInputError(f"invalid value for {key}: {exc}") from exc
        resolved[key] = value
    return resolved


def _as_range(value) -> tuple:
    if isinstance(value, str):
        parts = value.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'low,high', got {value!r}")
        return float(parts[0]), float(parts[1])
    lo, hi = value
    return float(lo), float(hi)


def _as_methods(value) -> tuple:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    methods = tuple(value)
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ValueError(f"unknown method {m!r}")
    return methods


def _identity(x):
    return x


def _maybe_dump(resolved: dict, args) -> None:
    if getattr(args, "config_dump", False):
        print(json.dumps(_round_floats(resolved), sort_keys=True))


def _stats_payload(result) -> dict:
    payload = {}
    for m, st in result.stats.items():
        payload[m] = {
            "n_used": st.n_used,
            "n_failed": st.n_failed,
            "mean_loss": st.mean_loss,
            "mean_loss_se": st.mean_loss_se,
            "loss_pct": st.loss_pct,
            "loss_pct_se": st.loss_pct_se,
        }
        if st.coverage is not None:
            payload[m].update(
                {
                    "coverage": st.coverage,
                    "coverage_se": st.coverage_se,
                    "min_coverage": st.min_coverage,
                    "mean_length": st.mean_length,
                    "length_pct": st.length_pct,
                    "length_pct_se": st.length_pct_se,
                }
            )
    return payload


# ---------------------------------------------------------------------------
# estimate


def _fit_report(method: str, pair: EstimatePair, ure_opts: UreOptions):
    if method == "mm1":
        return fit_mm1(pair), {}
    if method == "mm2":
        return fit_mm2(pair), {}
    if method == "mle":
        sol = fit_mle(pair)
        return sol.hp, {
            "boundary_case": sol.boundary_case.value,
            "eta_residual": sol.eta_residual,
            "gamma_residual": sol.gamma_residual,
        }
    if method == "ure":
        sol = fit_ure(pair, ure_opts)
        return sol.hp, {"ure_value": sol.ure_value, "evaluations": sol.evaluations}
    raise CliInputError(f"not a hyperparameter method: {method}")


def cmd_estimate(args) -> int:
    spec = {
        "input": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "method": (_as_methods, ("mm1", "mm2", "mle", "ure")),
        "alpha": (float, 0.05),
        "floor_frac": (float, 0.01),
        "eta2": (float, None),
        "gamma2": (float, None),
        "ure_maxiter": (int, 500),
        "ure_xatol": (float, 1e-8),
    }
    cfg = _resolve(args, spec)
    _maybe_dump(cfg, args)
    labels, pair = _read_stratum_csv(cfg["input"])
    if not 0 < cfg["alpha"] < 1:
        raise CliInputError("alpha must lie in (0, 1)")
    ure_opts = UreOptions(xatol=cfg["ure_xatol"], maxiter=cfg["ure_maxiter"])

    columns: dict[str, list] = {}
    fits: dict[str, dict] = {}
    for method in cfg["method"]:
        est = ci_lo = ci_hi = cvals = cvas = None
        if method in ("mm1", "mm2", "mle", "ure", "fixed"):
            if method == "fixed":
                if cfg["eta2"] is None or cfg["gamma2"] is None:
                    raise CliInputError("method 'fixed' requires --eta2 and --gamma2")
                hp, extra = Hyperparams(cfg["gamma2"], cfg["eta2"], FitMethod.FIXED), {}
            else:
                hp, extra = _fit_report(method, pair, ure_opts)
            truncated = truncate_hyperparams(hp, pair, cfg["floor_frac"])
            intervals = robust_intervals(pair, truncated, cfg["alpha"])
            est = intervals.center
            ci_lo, ci_hi = intervals.lower, intervals.upper
            cvals, cvas = intervals.c, intervals.cva
            fits[method] = {
                "gamma2": hp.gamma2,
                "eta2": hp.eta2,
                "gamma2_used": truncated.gamma2,
                "eta2_used": truncated.eta2,
                "truncated": truncated.truncated,
                **extra,
            }
        elif method == "raw-u":
            from scipy.stats import norm

            z = float(norm.ppf(1 - cfg["alpha"] / 2))
            est = pair.tau_u
            half = z * np.sqrt(pair.var_u)
            ci_lo, ci_hi = est - half, est + half
            cvals, cvas = np.zeros(pair.k), np.full(pair.k, z)
        elif method == "raw-b":
            est = pair.tau_b
        elif method == "pw":
            est = competitors.precision_weighted(pair)
        elif method == "kappa1":
            est = competitors.kappa1(pair)
        elif method == "kappa2":
            est = competitors.kappa2(pair)
        elif method == "delta1":
            est = competitors.delta1(pair)
        elif method == "delta2":
            est = competitors.delta2(pair)
        elif method == "delta91":
            est = competitors.delta_homoscedastic(pair)
        columns[method] = [est, ci_lo, ci_hi, cvals, cvas]

    csv_path, json_path = _out_paths(cfg["out"])
    header = list(_STRATUM_COLUMNS)
    for method in cfg["method"]:
        header.extend(
            [f"{method}_estimate", f"{method}_ci_low", f"{method}_ci_high", f"{method}_c", f"{method}_cva"]
        )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, label in enumerate(labels):
            row = [label, _fmt(pair.tau_u[i]), _fmt(pair.var_u[i]), _fmt(pair.tau_b[i]), _fmt(pair.var_b[i])]
            for method in cfg["method"]:
                for col in columns[method]:
                    row.append(_fmt(col[i]) if col is not None else "")
            writer.writerow(row)
    _write_json(
        json_path,
        {
            "command": "estimate",
            "alpha": cfg["alpha"],
            "floor_frac": cfg["floor_frac"],
            "methods": list(cfg["method"]),
            "n_strata": pair.k,
            "fits": fits,
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / coverage


def _sim_config(cfg) -> SimConfig:
    return SimConfig(
        k=cfg["k"],
        eta2=cfg["eta2"],
        gamma2=cfg["gamma2"],
        var_u_range=cfg["var_u"],
        var_b_range=cfg["var_b"],
        n_reps=cfg["reps"],
        seed=cfg["seed"],
        methods=cfg["method"],
        alpha=cfg.get("alpha"),
        redraw_latents=not cfg["fix_latents"],
        floor_frac=cfg["floor_frac"],
    )


_SIM_SPEC = {
    "k": (int, _REQUIRED),
    "eta2": (float, _REQUIRED),
    "gamma2": (float, _REQUIRED),
    "var_u": (_as_range, _REQUIRED),
    "var_b": (_as_range, _REQUIRED),
    "reps": (int, 1000),
    "seed": (int, 0),
    "method": (_as_methods, ("raw-u", "raw-b", "pw", "mm1", "mm2", "mle", "ure")),
    "floor_frac": (float, 0.01),
    "label": (str, "sim"),
    "out": (str, _REQUIRED),
    "fix_latents": (bool, False),
}


def _write_scenario_table(csv_path, label, config, result, metrics) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "metric"] + list(result.methods))
        for metric, getter in metrics:
            writer.writerow([label, metric] + [_fmt(getter(result.stats[m])) for m in result.methods])


def cmd_simulate(args) -> int:
    spec = dict(_SIM_SPEC)
    spec["emit_data"] = (str, None)
    cfg = _resolve(args, spec)
    _maybe_dump(cfg, args)
    config = _sim_config(cfg)
    if cfg["emit_data"]:
        pair, _ = next(iter(generate(config)))
        with open(cfg["emit_data"], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_STRATUM_COLUMNS)
            for i in range(pair.k):
                writer.writerow(
                    ["s%d" % (i + 1)]
                    + [_fmt(v) for v in (pair.tau_u[i], pair.var_u[i], pair.tau_b[i], pair.var_b[i])]
                )
    result = evaluate_risk(config)
    csv_path, json_path = _out_paths(cfg["out"])
    _write_scenario_table(csv_path, cfg["label"], config, result, [("loss_pct", lambda s: s.loss_pct)])
    _write_json(
        json_path,
        {
            "command": "simulate",
            "scenario": cfg["label"],
            "config": {k: v for k, v in cfg.items() if k not in ("out", "emit_data")},
            "results": _stats_payload(result),
        },
    )
    return EXIT_OK


def cmd_coverage(args) -> int:
    spec = dict(_SIM_SPEC)
    spec["alpha"] = (float, 0.05)
    spec["method"] = (_as_methods, ("raw-u", "mm1", "mm2", "mle", "ure"))
    cfg = _resolve(args, spec)
    _maybe_dump(cfg, args)
    config = _sim_config(cfg)
    result = evaluate_coverage(config)
    csv_path, json_path = _out_paths(cfg["out"])
    _write_scenario_table(
        csv_path,
        cfg["label"],
        config,
        result,
        [
            ("loss_pct", lambda s: s.loss_pct),
            ("coverage_pct", lambda s: None if s.coverage is None else 100.0 * s.coverage),
            ("min_coverage_pct", lambda s: None if s.min_coverage is None else 100.0 * s.min_coverage),
            ("length_pct", lambda s: s.length_pct),
        ],
    )
    _write_json(
        json_path,
        {
            "command": "coverage",
            "scenario": cfg["label"],
            "config": {k: v for k, v in cfg.items() if k != "out"},
            "wald_mean_length": result.wald_mean_length,
            "results": _stats_payload(result),
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# bootstrap


def cmd_bootstrap(args) -> int:
    spec = {
        "input": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "n_boot": (int, 1000),
        "rct_subsample": (int, _REQUIRED),
        "seed": (int, 0),
        "alpha": (float, None),
        "method": (_as_methods, ("raw-u", "mm1", "mm2", "mle", "ure")),
        "floor_frac": (float, 0.01),
        "var_floor": (float, 0.0),
        "label": (str, "bootstrap"),
        "keep_obs": (bool, False),
    }
    cfg = _resolve(args, spec)
    _maybe_dump(cfg, args)
    rows = _read_unit_csv(cfg["input"])
    result = bootstrap_eval(
        rows,
        n_boot=cfg["n_boot"],
        rct_subsample=cfg["rct_subsample"],
        seed=cfg["seed"],
        methods=cfg["method"],
        alpha=cfg["alpha"],
        floor_frac=cfg["floor_frac"],
        var_floor=cfg["var_floor"],
        resample_obs=not cfg["keep_obs"],
    )
    metrics = [("loss_pct", lambda s: s.loss_pct)]
    if cfg["alpha"] is not None:
        metrics.extend(
            [
                ("coverage_pct", lambda s: None if s.coverage is None else 100.0 * s.coverage),
                ("min_coverage_pct", lambda s: None if s.min_coverage is None else 100.0 * s.min_coverage),
                ("length_pct", lambda s: s.length_pct),
            ]
        )
    csv_path, json_path = _out_paths(cfg["out"])
    _write_scenario_table(csv_path, cfg["label"], None, result, metrics)
    _write_json(
        json_path,
        {
            "command": "bootstrap",
            "scenario": cfg["label"],
            "config": {k: v for k, v in cfg.items() if k != "out"},
            "n_excluded": result.n_excluded,
            "n_reps_used": result.n_reps,
            "results": _stats_payload(result),
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--config-dump", action="store_true", help="print the resolved config")
    p.add_argument("--out", help="output path; writes <out>.csv and <out>.json")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", dest="k", type=int, help="number of strata")
    p.add_argument("--eta2", type=float, help="prior effect variance")
    p.add_argument("--gamma2", type=float, help="prior bias variance")
    p.add_argument("--var-u", dest="var_u", help="unbiased variance range 'low,high'")
    p.add_argument("--var-b", dest="var_b", help="biased variance range 'low,high'")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--label", help="scenario label in output tables")
    p.add_argument("--fix-latents", dest="fix_latents", action="store_const", const=True,
                   help="draw effects and biases once instead of per replication")
    p.add_argument("--floor-frac", dest="floor_frac", type=float,
                   help="eta2 truncation floor as a fraction of median var_u")
    p.add_argument("--method", action="append", choices=KNOWN_METHODS,
                   help="estimator to evaluate (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doubleshrink",
        description="Double-shrinkage estimation, robust intervals, and simulation tables.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate effects from a stratum-summary CSV")
    _add_common(p)
    p.add_argument("--input", help="CSV with header stratum,tau_u,var_u,tau_b,var_b")
    p.add_argument("--method", action="append", choices=KNOWN_METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--floor-frac", dest="floor_frac", type=float)
    p.add_argument("--eta2", type=float, help="fixed eta2 (method 'fixed')")
    p.add_argument("--gamma2", type=float, help="fixed gamma2 (method 'fixed')")
    p.add_argument("--ure-maxiter", dest="ure_maxiter", type=int)
    p.add_argument("--ure-xatol", dest="ure_xatol", type=float)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="synthetic risk tables")
    _add_common(p)
    _add_sim_flags(p)
    p.add_argument("--emit-data", dest="emit_data", help="also write one generated stratum CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coverage", help="synthetic coverage and length tables")
    _add_common(p)
    _add_sim_flags(p)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("bootstrap", help="bootstrap evaluation of unit-level data")
    _add_common(p)
    p.add_argument("--input", help="CSV with header stratum,source,arm,outcome")
    p.add_argument("--n-boot", dest="n_boot", type=int)
    p.add_argument("--rct-subsample", dest="rct_subsample", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", action="append", choices=KNOWN_METHODS)
    p.add_argument("--floor-frac", dest="floor_frac", type=float)
    p.add_argument("--var-floor", dest="var_floor", type=float)
    p.add_argument("--label", help="scenario label in output tables")
    p.add_argument("--keep-obs", dest="keep_obs", action="store_const", const=True,
                   help="do not resample observational units")
    p.set_defaults(func=cmd_bootstrap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShrinkageError as exc:
        # remaining package errors are input-shaped (validation, aggregation,
        # degenerate data)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
