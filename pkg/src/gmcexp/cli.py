"""Command-line driver.

    gmcexp theory --q 2 --d 1 --beta2-range 0:4 --step 0.1
    gmcexp estimate --config run.toml --out runs/hi
    gmcexp sweep --config sweep.toml --out runs/sweep
    gmcexp probe {negm,lemma1,lemma2,prefreeze} --config probe.toml --out runs/p
    gmcexp toolbox {kahane,slepian} --n-pairs 200 --out runs/tb

Exit codes: 0 success, 2 validation error, 3 resource error, 4 numerical failure.
Outputs are CSV (series and tables) and a JSON run manifest; passing the
manifest back as ``--config`` reruns the command with identical output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config, estimators, theory, toolbox
from .errors import GmcexpError, ParameterError

log = logging.getLogger("gmcexp")

SERIES_COLUMNS = ("beta2", "q", "d", "eps", "log_eps", "log_estimate", "stderr", "n_replicas", "ess", "method")
FIT_COLUMNS = ("beta2", "q", "d", "method", "slope", "intercept", "slope_stderr", "r2", "rungs_used", "theory_value", "abs_error")
THEORY_COLUMNS = ("beta2", "regime", "eta_q", "teta_q", "hat_eta_q", "f1", "f2", "f3", "c_star")
SWEEP_COLUMNS = ("beta2", "q", "d", "regime", "method", "slope", "slope_stderr", "r2", "theory_value", "deviation")
SCHEMA_VERSION = 1


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (np.floating,)):
        return _fmt(float(v))
    return str(v)


def write_csv(path_or_stream, columns, rows):
    own = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    finally:
        if own:
            fh.close()


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- theory -------------------------------------------------------------------

def theory_row(beta2: float, q: float, d: int) -> dict:
    p = theory.ModelParams(beta2, q, d)
    return {
        "beta2": beta2,
        "regime": theory.classify_regime(p).label.value,
        "eta_q": theory.quenched_exponent(p),
        "teta_q": theory.annealed_exponent(p),
        "hat_eta_q": theory.participation_exponent(p),
        "f1": theory.simple_scaling(beta2, q),
        "f2": theory.prefreezing_branch(beta2, q, d) if beta2 > 0 else None,
        "f3": theory.frozen_branch(q, d),
        "c_star": theory.tilt_parameter(p) if beta2 > 0 else None,
    }


def theory_table(q: float, d: int, beta2_values) -> list:
    return [theory_row(float(b), q, d) for b in beta2_values]


def beta2_grid(lo: float, hi: float, step: float) -> list:
    if step <= 0 or hi < lo or lo < 0:
        raise ParameterError(f"bad beta2 range {lo}:{hi} with step {step}")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [lo + i * step for i in range(n + 1)]


def theory_value(method: str, p: theory.ModelParams) -> float:
    if method == "quenched":
        return theory.quenched_exponent(p)
    if method.startswith("participation"):
        return theory.participation_exponent(p)
    return theory.annealed_exponent(p)


# --- estimator dispatch ----------------------------------------------------------

def run_estimator(name: str, doc: dict, beta2=None, ladder=None, states=None, deterministic=False):
    """Run estimator ``name`` for the config document; returns ``(cfg, series)``."""
    if name in ("quenched", "annealed_naive"):
        cfg = config.run_config_from(doc, beta2, ladder, tilt="none")
        fn = estimators.estimate_quenched if name == "quenched" else estimators.estimate_annealed_naive
        return cfg, fn(cfg, states=states, deterministic=deterministic)
    if name == "annealed_tilted":
        tilt = doc["run"]["tilt"]
        cfg = config.run_config_from(doc, beta2, ladder, tilt="auto" if tilt == "none" else tilt)
        return cfg, estimators.estimate_annealed_tilted(cfg, states=states, deterministic=deterministic)
    cfg = config.run_config_from(doc, beta2, ladder)
    return cfg, estimators.participation_series(cfg, states=states, deterministic=deterministic)


def series_rows(series, p: theory.ModelParams) -> list:
    return [
        {
            "beta2": p.beta2, "q": p.q, "d": p.d, "eps": r.eps, "log_eps": math.log(r.eps),
            "log_estimate": r.log_estimate, "stderr": r.stderr, "n_replicas": r.n_replicas,
            "ess": r.ess, "method": r.method,
        }
        for r in series.records
    ]


def fit_row(series, p: theory.ModelParams, target=None) -> dict:
    fit = estimators.fit_exponent(series)
    tv = theory_value(series.method, p) if target is None else target
    return {
        "beta2": p.beta2, "q": p.q, "d": p.d, "method": series.method, "slope": fit.slope,
        "intercept": fit.intercept, "slope_stderr": fit.slope_stderr, "r2": fit.r_squared,
        "rungs_used": fit.rungs_used, "theory_value": tv, "abs_error": abs(fit.slope - tv),
    }


def refit_rows(series_csv_rows) -> list:
    """Re-fit slopes from parsed series CSV rows, grouped by (beta2, q, method)."""
    groups = {}
    for row in series_csv_rows:
        groups.setdefault((row["beta2"], row["q"], row["method"]), []).append(row)
    out = []
    for key, rows in groups.items():
        fit = estimators.fit_loglog(
            [float(r["log_eps"]) for r in rows],
            [float(r["log_estimate"]) for r in rows],
            [float(r["stderr"]) for r in rows],
        )
        out.append((key, fit))
    return out


# --- manifests -----------------------------------------------------------------------

def _rung_records(series) -> list:
    return [
        {"eps": r.eps, "jitter": r.diagnostics.get("jitter"), "n_points": r.diagnostics.get("n_points")}
        for r in series.records
    ]


def write_manifest(out: Path, command: list, doc: dict, started: float, deterministic: bool, extra: dict) -> Path:
    manifest = {
        "tool": "gmcexp",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": doc,
        "seed": doc["run"]["seed"],
        "deterministic": deterministic,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "wall_clock_seconds": time.time() - started,
    }
    manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _load_doc(args) -> dict:
    doc, _ = config.load(args.config)
    if args.seed is not None:
        doc["run"]["seed"] = int(args.seed)
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ----------------------------------------------------------------------

def cmd_theory(args) -> int:
    if args.beta2 is not None:
        values = [float(b) for b in args.beta2.split(",")]
    else:
        lo, hi = (float(v) for v in args.beta2_range.split(":"))
        values = beta2_grid(lo, hi, args.step)
    rows = theory_table(args.q, args.d, values)
    if args.out:
        write_csv(_out_dir(args) / "theory.csv", THEORY_COLUMNS, rows)
    else:
        write_csv(sys.stdout, THEORY_COLUMNS, rows)
    return 0


def cmd_estimate(args) -> int:
    started = time.time()
    doc = _load_doc(args)
    out = _out_dir(args)
    name = doc["run"]["estimator"]
    cfg, series = run_estimator(name, doc, deterministic=args.deterministic)
    write_csv(out / "series.csv", SERIES_COLUMNS, series_rows(series, cfg.params))
    frow = fit_row(series, cfg.params)
    write_csv(out / "fit.csv", FIT_COLUMNS, [frow])
    write_manifest(out, ["estimate"], doc, started, args.deterministic, {
        "rungs": _rung_records(series),
        "fit": frow,
        "warnings": [{"eps": e, "message": w} for e, w in series.warnings],
    })
    print(f"{series.method}: slope {frow['slope']:.4f} +/- {frow['slope_stderr']:.4f} "
          f"(theory {frow['theory_value']:.4f})")
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    doc = _load_doc(args)
    out = _out_dir(args)
    b2_list = doc["sweep"]["beta2"]
    if b2_list is None:
        raise config.ConfigError("'sweep.beta2' is required for a sweep")
    q, d = float(doc["model"]["q"]), int(doc["model"]["d"])
    if doc["run"]["replicas"] == 0:
        write_csv(out / "theory.csv", THEORY_COLUMNS, theory_table(q, d, b2_list))
        write_manifest(out, ["sweep"], doc, started, args.deterministic, {"mode": "theory_only"})
        return 0
    name = doc["run"]["estimator"]
    ladder = config.ladder_from(doc)
    states = estimators.ladder_states(config.run_config_from(doc, beta2=float(b2_list[0]), ladder=ladder, tilt="none"))
    all_series, rows, warns, rungs = [], [], [], None
    for b2 in b2_list:
        b2 = float(b2)
        if name == "annealed_tilted" and b2 == 0:
            raise ParameterError("annealed_tilted sweep cannot include beta2 = 0")
        cfg, series = run_estimator(name, doc, beta2=b2, ladder=ladder, states=states, deterministic=args.deterministic)
        rungs = rungs or _rung_records(series)
        all_series.extend(series_rows(series, cfg.params))
        frow = fit_row(series, cfg.params)
        rows.append({
            "beta2": b2, "q": q, "d": d,
            "regime": theory.classify_regime(cfg.params).label.value,
            "method": series.method, "slope": frow["slope"], "slope_stderr": frow["slope_stderr"],
            "r2": frow["r2"], "theory_value": frow["theory_value"],
            "deviation": frow["slope"] - frow["theory_value"],
        })
        warns.extend({"beta2": b2, "eps": e, "message": w} for e, w in series.warnings)
    write_csv(out / "series.csv", SERIES_COLUMNS, all_series)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    write_manifest(out, ["sweep"], doc, started, args.deterministic, {"rungs": rungs, "warnings": warns})
    return 0


def cmd_probe(args) -> int:
    started = time.time()
    doc = _load_doc(args)
    out = _out_dir(args)
    pr = doc["probe"]
    cfg = config.run_config_from(doc, tilt="none")
    p = cfg.params
    extra = {"probe": args.kind}
    fit_rows, series_list = [], []
    if args.kind == "negm":
        s = estimators.negative_moment_probe(cfg, float(pr["q"]), deterministic=args.deterministic)
        series_list.append(s)
        fit_rows.append(fit_row(s, p, target=0.0))
    elif args.kind == "lemma1":
        s, l_val = estimators.lemma1_probe(cfg, float(pr["s"]), float(pr["t"]), deterministic=args.deterministic)
        series_list.append(s)
        # l < 0: bounded (slope 0); l >= 0: growth at most eps^(-l t), up to a log factor
        target = 0.0 if l_val < 0 else -l_val * float(pr["t"])
        fit_rows.append(fit_row(s, p, target=target))
        extra["l"] = l_val
    elif args.kind == "lemma2":
        s = estimators.lemma2_probe(cfg, float(pr["c_exp"]), int(pr["points_per_box"]), deterministic=args.deterministic)
        series_list.append(s)
        fit_rows.append(fit_row(s, p, target=0.0))
    else:
        q_list = [float(q) for q in pr["q_list"]]
        estimators.check_prefreezing_regime(p, q_list)
        states = estimators.ladder_states(cfg)
        for q in q_list:
            s = estimators.participation_series(cfg, q, states=states, deterministic=args.deterministic)
            series_list.append(s)
            fit_rows.append(fit_row(s, replace(p, q=q)))
    srows = []
    for s, frow in zip(series_list, fit_rows):
        pp = replace(p, q=frow["q"])
        srows.extend(series_rows(s, pp))
    write_csv(out / "series.csv", SERIES_COLUMNS, srows)
    write_csv(out / "fit.csv", FIT_COLUMNS, fit_rows)
    extra["rungs"] = _rung_records(series_list[0])
    extra["warnings"] = [{"eps": e, "message": w} for s in series_list for e, w in s.warnings]
    write_manifest(out, ["probe", args.kind], doc, started, args.deterministic, extra)
    for frow in fit_rows:
        print(f"{args.kind} q={frow['q']:g}: slope {frow['slope']:.4f} +/- {frow['slope_stderr']:.4f}")
    return 0


def cmd_toolbox(args) -> int:
    report = toolbox.run_suite(args.kind, args.n_pairs, args.samples, args.seed, max_dim=args.max_dim, threshold=args.threshold)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        (_out_dir(args) / f"toolbox_{args.kind}.json").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"{args.kind}: {report['violations']} violations in {args.n_pairs} instances", file=sys.stderr)
    return 0


# --- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmcexp", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"gmcexp {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", required=True, help="TOML config or JSON manifest")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--deterministic", action="store_true", help="process rungs serially")

    p = sub.add_parser("theory", help="exponent table over a beta2 grid")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--beta2-range", default="0:4", help="LO:HI")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--beta2", default=None, help="explicit comma-separated values (overrides the range)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("estimate", help="run one estimator over the eps ladder")
    run_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="fitted exponents over a beta2 list")
    run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="lemma diagnostics")
    p.add_argument("kind", choices=("negm", "lemma1", "lemma2", "prefreeze"))
    run_flags(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("toolbox", help="randomised comparison-inequality checks")
    p.add_argument("kind", choices=("kahane", "slepian"))
    p.add_argument("--n-pairs", type=int, default=200)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--max-dim", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_toolbox)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GmcexpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("error: out of memory; reduce the grid size or replicas", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
