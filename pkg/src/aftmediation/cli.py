"""Command-line interface: ``aftmediation {fit,mediate,simulate,score-bias}``.

Exit codes: 0 success, 1 usage, 2 data, 3 fit, 4 simulation nonconvergence,
5 quadrature / probe failure.  Every command writes its output plus a
``RunManifest`` JSON next to it.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._ini import parse_ini
from ._validation import check_contrast
from .aft import AftSpec, FitError, fit
from .distributions import Convolved, law_from_name
from .mediation import BootstrapConfig, BootstrapError, analyze
from .score_oracle import (
    ProbeError,
    QuadratureError,
    ScoreBiasConfig,
    expected_score_left_truncation,
    expected_score_right_censoring,
    marginal_time_quantile,
    mle_limit_probe,
)
from .simulate import (
    SimulationError,
    emit_figure_data,
    read_scenarios,
    run,
    scenario_manifest,
    write_replicate_log,
)
from .survdata import DataValidationError, Schema, read_csv, summarize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT, EXIT_SIM, EXIT_QUAD = 0, 1, 2, 3, 4, 5
LAWS = ("normal", "weibull")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# serialization

def _clean(obj):
    """JSON-safe copy: NaN/inf -> None, numpy scalars/arrays -> Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    started: str
    finished: str = ""
    version: dict = field(default_factory=dict)
    nonconvergence: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        self.finished = _now()
        _dump_json(asdict(self), path)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest(config: dict, files=()) -> str:
    h = hashlib.sha256(json.dumps(_clean(config), sort_keys=True).encode())
    for f in files:
        if f is not None and Path(f).is_file():
            h.update(Path(f).read_bytes())
    return h.hexdigest()


def _versions() -> dict:
    return {"aftmediation": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def _manifest(args, command: str, files=()) -> RunManifest:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out", "workers")}
    return RunManifest(command=command, config_digest=_digest(config, files), seed=getattr(args, "seed", None),
                       started=_now(), version=_versions())


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# argument types

def _contrast(text: str):
    try:
        return check_contrast(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_list(text: str):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _replicates(text: str) -> int:
    try:
        b = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if b == 1 or b < 0:
        raise argparse.ArgumentTypeError("bootstrap needs 0 (off) or at least 2 replicates")
    return b


def _schema(args) -> Schema:
    if not args.schema:
        return Schema()
    try:
        return Schema.parse(args.schema)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid schema: {exc}") from None


# commands

def cmd_fit(args) -> int:
    manifest = _manifest(args, "fit", [args.data])
    data = read_csv(args.data, _schema(args))
    spec = AftSpec(law=law_from_name(args.law), exposure=not args.no_exposure, mediator=not args.no_mediator,
                   covariates=not args.no_covariates, time_scale=args.time_scale)
    result = fit(spec, data)
    if not result.converged:
        raise FitError(f"fit did not converge in {result.iterations} iterations "
                       f"(max |score| {result.max_abs_score:.3g})")
    out = Path(args.out)
    payload = result.to_dict()
    payload["data"] = summarize(data).as_dict()
    _dump_json(payload, out)
    manifest.outputs = [str(out)]
    manifest.nonconvergence = {"fit": 0}
    manifest.write(_manifest_path(out))
    print(f"{spec.law.name} AFT fit on {data.n} subjects: loglik {result.loglik:.6f}, "
          f"{result.iterations} iterations")
    return EXIT_OK


def _format_table(rows, time_scale: str) -> str:
    head = f"{'Effect':<24}{'Estimate':>11}{'SE':>10}{'95% CI':>24}"
    if time_scale == "log":
        head += f"{'exp(Est)':>11}"
    lines = [head]
    for r in rows:
        se = "" if r["se"] is None else f"{r['se']:.4f}"
        ci = "" if r["ci_lower"] is None else f"({r['ci_lower']:.4f}, {r['ci_upper']:.4f})"
        line = f"{r['effect']:<24}{r['estimate']:>11.4f}{se:>10}{ci:>24}"
        if time_scale == "log":
            line += f"{r['exp_estimate']:>11.4f}"
        if r.get("note"):
            line += "  *"
        lines.append(line)
    if any(r.get("note") for r in rows):
        lines.append("* " + next(r["note"] for r in rows if r.get("note")))
    return "\n".join(lines)


def cmd_mediate(args) -> int:
    manifest = _manifest(args, "mediate", [args.data])
    data = read_csv(args.data, _schema(args))
    boot = None
    if args.bootstrap:
        boot = BootstrapConfig(replicates=args.bootstrap, seed=args.seed, ci_level=args.ci_level, workers=args.workers)
    est = analyze(data, law_from_name(args.law), args.contrast, boot, args.time_scale)
    out = Path(args.out)
    payload = est.to_dict()
    payload["data"] = summarize(data).as_dict()
    _dump_json(payload, out)
    table_path = out.with_suffix(".table.csv")
    rows = est.table()
    cols = ["effect", "estimate", "se", "ci_lower", "ci_upper", "pct_ci_lower", "pct_ci_upper",
            "exp_estimate", "exp_ci_lower", "exp_ci_upper", "note"]
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
    manifest.outputs = [str(out), str(table_path)]
    manifest.nonconvergence = {"bootstrap_dropped": est.bootstrap_dropped}
    manifest.details = {"bootstrap_replicates_kept": est.bootstrap_replicates}
    manifest.write(_manifest_path(out))
    print(_format_table(rows, args.time_scale))
    return EXIT_OK


def cmd_simulate(args) -> int:
    manifest = _manifest(args, "simulate", [args.scenario])
    try:
        scenarios = read_scenarios(args.scenario)
    except (ValueError, configparser.Error, OSError) as exc:
        raise UsageError(f"invalid scenario file: {exc}") from None
    overrides = {k: v for k, v in (("replicates", args.replicates), ("seed", args.seed)) if v is not None}
    scenarios = [replace(s, **overrides) for s in scenarios]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries, runs, failed = [], [], None
    for sc in scenarios:
        try:
            result = run(sc, workers=args.workers)
        except SimulationError as exc:
            result, failed = exc.result, exc
        summaries.append(result.summary)
        log_path = out / f"replicates_{sc.name}_{sc.censoring.label}_n{sc.n}.csv".replace("/", "_").replace("@", "_")
        write_replicate_log(result, log_path)
        runs.append({**scenario_manifest(result), "replicate_log": log_path.name})
        manifest.nonconvergence[f"{sc.label} n={sc.n}"] = result.summary.nonconverged_count
        print(f"{sc.label:<28} n={sc.n:<6} IE_p={result.summary.mean_nie_product:.5f} "
              f"IE_d={result.summary.mean_nie_difference:.5f} "
              f"bias_p={result.summary.prop_bias_product:.4f} bias_d={result.summary.prop_bias_difference:.4f}")
        if failed:
            break
    written = emit_figure_data(summaries, out)
    manifest.outputs = sorted(p.name for p in out.iterdir() if p.suffix == ".csv")
    manifest.details = {"scenarios": runs, "figure_files": [p.name for p in written]}
    manifest.write(out / "manifest.json")
    if failed:
        print(f"error: {failed}", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


SCORE_KEYS = {
    "true_law": str, "base": str, "sigma": float, "beta_m": float, "mediator_sd": float, "assumed_law": str,
    "alpha": float, "beta": float, "betas": _float_list, "exposure_prob": float, "true_scale": float,
    "mode": str, "quantiles": _float_list, "tolerance": float, "probe": str,
}
SCORE_DEFAULTS = {
    "true_law": "convolved", "base": "weibull", "sigma": "0.25", "beta_m": "-0.6", "mediator_sd": "1",
    "assumed_law": "weibull", "alpha": "4", "beta": "0.68", "exposure_prob": "0.5", "true_scale": "1",
    "mode": "censoring", "quantiles": "0.5,0.7,0.9,0.99,inf", "tolerance": "1e-10", "probe": "no",
}


def read_score_config(path) -> dict:
    cp = parse_ini(Path(path).read_text(encoding="utf-8") if path else "", "score-bias")
    section = cp[cp.sections()[0]]
    raw = dict(SCORE_DEFAULTS)
    for k, v in section.items():
        if k not in SCORE_KEYS:
            raise ValueError(f"unknown key {k!r}")
        raw[k] = v
    cfg = {k: SCORE_KEYS[k](v.strip()) if SCORE_KEYS[k] is not str else v.strip().lower() for k, v in raw.items()}
    if "betas" not in cfg:
        cfg["betas"] = [cfg["beta"]]
    if cfg["mode"] not in ("censoring", "truncation"):
        raise ValueError("mode must be 'censoring' or 'truncation'")
    if cfg["probe"] not in ("yes", "no", "true", "false", "1", "0"):
        raise ValueError("probe must be yes or no")
    cfg["probe"] = cfg["probe"] in ("yes", "true", "1")
    return cfg


def _true_law(cfg):
    if cfg["true_law"] == "convolved":
        return Convolved(cfg["sigma"], cfg["beta_m"], cfg["mediator_sd"], law_from_name(cfg["base"]))
    return law_from_name(cfg["true_law"])


SCORE_COLUMNS = ("mode", "quantile", "point", "beta", "expected_score_beta", "quadrature_abs_error",
                 "n_evaluations", "alpha_bar", "beta_bar", "beta_bias", "scale_bar", "alpha_profile",
                 "score_beta_at_profile")


def cmd_score_bias(args) -> int:
    manifest = _manifest(args, "score-bias", [args.config])
    try:
        cfg = read_score_config(args.config)
        if args.quantiles is not None:
            cfg["quantiles"] = args.quantiles
        if args.betas is not None:
            cfg["betas"] = args.betas
        true_law, assumed = _true_law(cfg), law_from_name(cfg["assumed_law"])
    except (ValueError, configparser.Error, OSError) as exc:
        raise UsageError(f"invalid score-bias config: {exc}") from None
    censoring = cfg["mode"] == "censoring"
    rows = []
    for beta in cfg["betas"]:
        base = ScoreBiasConfig(true_law=true_law, assumed_law=assumed, true_params=(cfg["alpha"], beta),
                               exposure_prob=cfg["exposure_prob"], true_scale=cfg["true_scale"])
        for q in cfg["quantiles"]:
            boundary = (censoring and math.isinf(q)) or (not censoring and q == 0)
            if not boundary and not 0 < q < 1:
                raise UsageError(f"quantile {q} outside (0, 1); use inf (censoring) or 0 (truncation) for none")
            point = (math.inf if censoring else 0.0) if boundary else marginal_time_quantile(base, q)
            c = replace(base, censor_time=point) if censoring else replace(base, truncation_time=point)
            oracle = expected_score_right_censoring if censoring else expected_score_left_truncation
            res = oracle(c, cfg["tolerance"])
            row = {"mode": cfg["mode"], "quantile": q, "point": point, "beta": beta,
                   "expected_score_beta": res.expected_score_beta, "quadrature_abs_error": res.quadrature_abs_error,
                   "n_evaluations": res.n_evaluations}
            if cfg["probe"]:
                pr = mle_limit_probe(c)
                row.update(alpha_bar=pr.alpha_bar, beta_bar=pr.beta_bar, beta_bias=pr.beta_bias,
                           scale_bar=pr.scale_bar, alpha_profile=pr.alpha_profile,
                           score_beta_at_profile=pr.score_beta_at_profile)
            rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in SCORE_COLUMNS])
    out.write_text(buf.getvalue(), encoding="utf-8")
    manifest.outputs = [str(out)]
    manifest.details = {"config": cfg, "rows": len(rows)}
    manifest.write(_manifest_path(out))
    for r in rows:
        print(f"{r['mode']} q={r['quantile']:<6g} beta={r['beta']:<6g} E[U_beta]={r['expected_score_beta']:+.3e}")
    return EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aftmediation", description="Mediation analysis for survival outcomes under AFT models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--schema", help="column mapping: 'key=col,...' or a key-value file")
        p.add_argument("--law", choices=LAWS, default="weibull")
        p.add_argument("--time-scale", choices=("log", "identity"), default="log",
                       help="model log(T) (AFT) or T itself (gaussian regression with --law normal)")
        p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("fit", help="fit one AFT model")
    data_args(p)
    p.add_argument("--no-exposure", action="store_true", help="drop the exposure term")
    p.add_argument("--no-mediator", action="store_true", help="drop the mediator term")
    p.add_argument("--no-covariates", action="store_true", help="drop the schema covariates")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mediate", help="direct / indirect / total effects")
    data_args(p)
    p.add_argument("--contrast", type=_contrast, default=(1.0, 0.0), help="exposure contrast a,a* (default 1,0)")
    p.add_argument("--bootstrap", type=_replicates, default=0, metavar="B", help="bootstrap replicates (0: none)")
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_mediate)

    p = sub.add_parser("simulate", help="Monte Carlo study from a scenario file")
    p.add_argument("scenario", help="key-value scenario file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score-bias", help="expected misspecified score over a grid")
    p.add_argument("config", nargs="?", help="key-value config (defaults: Weibull mediation scenario)")
    p.add_argument("--quantiles", type=_float_list, help="censoring / truncation quantiles (inf or 0: none)")
    p.add_argument("--betas", type=_float_list, help="true exposure coefficients")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_score_bias)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"aftmediation: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FileNotFoundError) as exc:
        print(f"aftmediation: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, BootstrapError) as exc:
        print(f"aftmediation: fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (QuadratureError, ProbeError) as exc:
        print(f"aftmediation: quadrature error: {exc}", file=sys.stderr)
        return EXIT_QUAD


if __name__ == "__main__":
    sys.exit(main())
