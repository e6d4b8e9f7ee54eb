"""Command-line interface: ``magfg {simulate,calibrate,study,delta}``.

Exit codes: 0 success, 1 numerical failure, 2 I/O or validation failure.
Failures print a JSON object ``{"error", "message", "exit-code"}`` on
stderr. Outputs carry a schema version, the seed and a hash of the
resolved configuration, and contain no timings, so equal inputs give
byte-identical files.
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

from .errors import InputError, NumericalError
from .config import SCHEMA_VERSION, RunConfig, load_config
from .evaluation import (
    METHOD_ALIASES,
    ROW_FIELDS,
    compute_metrics,
    delta_hi_experiment,
    estimate_hard_iron,
    hard_iron_metrics,
    run_study,
)
from .logfile import ingest_csv, write_csv
from .measurements import NoiseSpec
from .simulator import TruthRecord, simulate

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2


def _clean(x):
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dump_json(obj, path=None):
    text = json.dumps(_clean(obj), indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _header(kind, cfg: RunConfig):
    return {
        "schema-version": SCHEMA_VERSION,
        "kind": kind,
        "seed": cfg.seed,
        "config-hash": cfg.config_hash(),
    }


def _resolve(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "runs", None) is not None:
        cfg.runs = args.runs
    return cfg


def _outdir(args):
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _resolve(args)
    out = _outdir(args) or Path(".")
    noise = cfg.sim_noise()
    truth_spec = cfg.truth
    if args.zero_noise:
        noise = replace(NoiseSpec.zero(), field_q=noise.field_q)
        truth_spec = replace(truth_spec, soft_iron_sigma=0.0)
    truth, meas = simulate(cfg.profile, truth_spec, noise, cfg.seed,
                           hard_iron_magnitude=truth_spec.hard_iron_magnitude,
                           weighting=cfg.sim_noise())
    write_csv(out / "log.csv", meas)
    doc = _header("truth", cfg)
    doc["zero-noise"] = bool(args.zero_noise)
    doc["truth"] = truth.to_dict()
    dump_json(doc, out / "truth.json")
    return EXIT_OK


def _load_truth(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return TruthRecord.from_dict(doc["truth"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a truth file ({exc})") from None


def cmd_calibrate(args):
    cfg = _resolve(args)
    method = METHOD_ALIASES.get(args.method, args.method)
    log = ingest_csv(args.log, gyro_rates=cfg.gyro_rates, decimate=cfg.decimate)
    meas = log.to_measurements(cfg.noise)
    truth = _load_truth(args.truth) if args.truth else None
    e_mag = np.linalg.norm(truth.fields, axis=1) if truth is not None else None
    if truth is not None and truth.n != meas.n:
        raise InputError(f"truth has {truth.n} steps, log has {meas.n}")
    res = estimate_hard_iron(meas, method, e_magnitude=e_mag,
                             graph_config=cfg.graph_config(), solver_config=cfg.solver)
    doc = _header("calibration", cfg)
    doc["method"] = method
    doc["log"] = Path(args.log).name
    doc["samples"] = meas.n
    doc["h-hi"] = res.h_hi
    if res.state is not None:
        rep = res.detail
        doc["parameters"] = res.state.params.to_dict()
        cov = rep.param_covariance
        doc["parameter-sigma"] = None if cov is None else np.sqrt(np.abs(np.diag(cov)))
        doc["diagnostics"] = {
            "converged": rep.converged,
            "iterations": rep.iterations,
            "reason": rep.reason,
            "cost": rep.cost,
            "gradient-norm": rep.gradient_norm,
        }
    elif method == "twostep":
        d = res.detail
        doc["diagnostics"] = {
            "converged": d.converged,
            "iterations": d.iterations,
            "centered-bias": d.centered_bias,
            "reference-magnitude": "truth" if truth is not None else "median-scalar",
        }
    else:
        d = res.detail
        doc["coefficients"] = {
            "permanent": d.permanent,
            "induced": d.induced,
            "eddy": d.eddy,
            "all": d.coefficients,
        }
        doc["diagnostics"] = {"singular-ratio": d.singular_ratio,
                              "bandpass-hz": [d.bandpass.low, d.bandpass.high],
                              "filter-order": d.bandpass.order}
    if truth is not None:
        m = (compute_metrics(truth, res.state) if res.state is not None
             else hard_iron_metrics(truth.params.h_hi, res.h_hi))
        doc["metrics"] = {_dash(k): v for k, v in m.as_row().items()}
    out = _outdir(args)
    dump_json(doc, None if out is None else out / "calibration.json")
    return EXIT_OK


def _dash(k):
    return k.replace("_", "-")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def cmd_study(args):
    cfg = _resolve(args)
    spec = cfg.study_spec(zero_noise=args.zero_noise)
    result = run_study(spec)
    out = _outdir(args) or Path(".")
    with open(out / "study.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in result.rows:
            w.writerow([_fmt(r[k]) for k in ROW_FIELDS])
    doc = _header("study-summary", cfg)
    doc["config"] = cfg.to_dict()
    doc["config"]["zero-noise"] = bool(args.zero_noise)
    doc["rows-file"] = "study.csv"
    doc["cells"] = [{_dash(k): v for k, v in c.items()} for c in result.aggregates()]
    dump_json(doc, out / "summary.json")
    return EXIT_OK


def cmd_delta(args):
    cfg = _resolve(args)
    before = ingest_csv(args.before, cfg.gyro_rates, cfg.decimate).to_measurements(cfg.noise)
    after = ingest_csv(args.after, cfg.gyro_rates, cfg.decimate).to_measurements(cfg.noise)
    rep = delta_hi_experiment(before, after, args.reference, args.method,
                              cfg.graph_config(), cfg.solver)
    doc = _header("delta", cfg)
    doc.update({_dash(k): v for k, v in rep.to_dict().items()})
    out = _outdir(args)
    if out is not None:
        dump_json(doc, out / "delta.json")
    lines = [f"delta_hi [nT]: {_vec(rep.delta)}"]
    if rep.reference is not None:
        lines.append(f"epsilon  [nT]: {_vec(rep.epsilon)}")
        lines.append(f"|epsilon| [nT]: {rep.epsilon_norm:.2f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _vec(v):
    return "[" + " ".join(f"{x:.2f}" for x in v) + "]"


def build_parser():
    p = argparse.ArgumentParser(prog="magfg", description="Factor-graph magnetometer calibration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", metavar="PATH", help="JSON configuration file")
        if seed:
            sp.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    s = sub.add_parser("simulate", help="write a simulated log.csv and truth.json")
    common(s)
    s.add_argument("--zero-noise", action="store_true",
                   help="no sensor noise and no soft iron (model-exact log)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="run one calibrator on a CSV log")
    c.add_argument("log", help="CSV sensor log")
    common(c)
    c.add_argument("--method", default="fg", choices=sorted(METHOD_ALIASES))
    c.add_argument("--truth", metavar="PATH", help="truth.json for error metrics")
    c.set_defaults(func=cmd_calibrate)

    st = sub.add_parser("study", help="Monte Carlo study; writes study.csv and summary.json")
    common(st)
    st.add_argument("--runs", type=int, metavar="N", help="override the run count")
    st.add_argument("--zero-noise", action="store_true")
    st.set_defaults(func=cmd_study)

    d = sub.add_parser("delta", help="hard-iron change between two logs")
    d.add_argument("before")
    d.add_argument("after")
    common(d)
    d.add_argument("--method", default="fg", choices=sorted(METHOD_ALIASES))
    d.add_argument("--reference", type=float, nargs=3, metavar=("DX", "DY", "DZ"),
                   help="expected change in nT; adds epsilon to the report")
    d.set_defaults(func=cmd_delta)
    return p


def _fail(exc, code):
    err = {"error": type(exc).__name__, "message": str(exc), "exit-code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "runs", None) is not None and args.runs < 1:
        return _fail(ValueError("--runs must be >= 1"), EXIT_INPUT)
    try:
        return args.func(args)
    except NumericalError as exc:
        return _fail(exc, EXIT_NUMERICAL)
    except (InputError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _fail(exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
