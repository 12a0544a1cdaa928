"""Command-line front end: bounds, concentration checks, stability simulations and recovery."""
import argparse
import csv
import itertools
import json
import math
import os
from pathlib import Path
import sys

import jsonschema
import numpy as np
import yaml

from .concentration import SmallBallQuery, boundary_witness, small_ball_bound, small_ball_mc
from .constraint_sets import sample_member, spec_from_dict
from .covering import CoveringSource
from .experiments import SearchConfig, SolverConfig, TrialRecord, failure_rate_experiment, recover
from .measurements import EnsembleSpec, draw_operator
from .numerics import Rng
from .stability import REPORT_COLUMNS, PreconditionError, StabilityQuery, failure_bound

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

CONCENTRATION_COLUMNS = [
    "model", "dist", "n1", "n2", "params", "E", "delta", "eps", "bound", "estimate",
    "ci_lower", "ci_upper", "trials", "pass", "error",
]
SIMULATE_COLUMNS = [
    "variant", "model", "dist", "kind", "norm", "m", "delta", "eps", "detector",
    "trials", "failures", "rate", "ci_lower", "ci_upper", "p_fail", "bound_valid",
    "informative", "consistent",
]
RECOVER_COLUMNS = ["m", "objective", "iterations", "converged", "rel_error"]

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}
_POS_INT = {"type": "integer", "minimum": 0}
_PARAM = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1, "maxItems": 2}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "constraint": {"type": "object"},
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model", "dist", "n1", "n2"],
            "properties": {
                "model": {"enum": ["unstructured", "rank1", "sym_rank1"]},
                "dist": {"enum": ["uniform", "gaussian"]},
                "m": {"type": "integer", "minimum": 1},
                "n1": {"type": "integer", "minimum": 1},
                "n2": {"type": "integer", "minimum": 1},
                "R": _PARAM,
                "sigma": _PARAM,
            },
        },
        "query": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["single_point", "uniform_on_ball", "uniform_on_cone", 1, 2, 3]},
                "delta": _NUM,
                "eps": _NUM,
                "norm": {"enum": ["fro", "spectral", None]},
            },
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "restarts": {"type": "integer", "minimum": 1},
                "max_iters": {"type": "integer", "minimum": 1},
                "step": {"enum": ["backtracking", "fixed"]},
                "normalization": {"enum": ["query", "fro", "spectral"]},
                "resolution": {"type": "integer", "minimum": 2, "maximum": 401},
                "refine_rounds": _POS_INT,
                "tol": _NUM,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"m": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                           "delta": _NUMS, "eps": _NUMS},
        },
        "concentration": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model", "dist", "n1", "n2", "params"],
            "properties": {
                "model": {"enum": ["unstructured", "rank1", "sym_rank1"]},
                "dist": {"enum": ["uniform", "gaussian"]},
                "n1": {"type": "integer", "minimum": 1},
                "n2": {"type": "integer", "minimum": 1},
                "params": _PARAM,
                "E": _NUM,
            },
        },
        "recover": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x0": {"type": ["array", "null"]},
                "x0_norm": _NUM,
                "y": {"type": ["array", "null"], "items": _NUM},
                "noise": _NUM,
                "radius": {"type": ["number", "null"]},
                "max_iters": {"type": "integer", "minimum": 1},
                "tol": _NUM,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "trials": _POS_INT,
        "threads": {"type": "integer", "minimum": 1},
        "detector": {"enum": ["search", "brute_force"]},
        "x0_norm": {"type": ["number", "null"]},
        "covering_source": {"enum": ["proposition", "minkowski"]},
        "rho_validity": {"type": ["number", "null"]},
        "acknowledge_unverified": {"type": "boolean"},
        "E": _NUM,
        "out": {"type": "string"},
    },
}

_REQUIRED = {
    "bounds": ["constraint", "ensemble", "query"],
    "concentration": ["concentration"],
    "simulate": ["constraint", "ensemble", "query"],
    "recover": ["constraint", "ensemble"],
}


class ConfigError(Exception):
    pass


def _where(err):
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "config"


def load_config(path, command):
    """Read a YAML or JSON config and validate it; errors name the offending field."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from exc
    return validate_config(doc, command)


def validate_config(doc, command):
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a mapping at the top level")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            where = _where(e)
            names = ", ".join(f"{where}.{k}" if where != "config" else k for k in extra)
            raise ConfigError(f"unknown field(s): {names}")
        raise ConfigError(f"{_where(e)}: {e.message}")
    missing = [k for k in _REQUIRED[command] if k not in doc]
    if missing:
        raise ConfigError(f"{missing[0]}: required for the {command} command")
    return doc


def _build(fn, doc, where):
    try:
        return fn(doc)
    except (ValueError, TypeError, KeyError) as exc:
        msg = f"missing field {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
        raise ConfigError(msg if msg.startswith(where) else f"{where}: {msg}") from exc


def _ensemble(cfg, m=None):
    doc = dict(cfg["ensemble"])
    if m is not None:
        doc["m"] = m
    doc.setdefault("m", 1)
    return _build(EnsembleSpec.from_dict, doc, "ensemble")


def _query(cfg, delta=None, eps=None):
    doc = dict(cfg["query"])
    if delta is not None:
        doc["delta"] = delta
    if eps is not None:
        doc["eps"] = eps
    for k in ("delta", "eps"):
        if k not in doc:
            raise ConfigError(f"query.{k}: required")
    return _build(lambda d: StabilityQuery(d["kind"], d["delta"], d["eps"], d.get("norm")), doc, "query")


def _search(cfg):
    return _build(lambda d: SearchConfig(**d), cfg.get("search", {}), "search")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def cmd_bounds(cfg, out):
    spec = _build(spec_from_dict, cfg["constraint"], "constraint")
    grid = cfg.get("grid", {})
    ms = grid.get("m", [cfg["ensemble"]["m"]] if "m" in cfg["ensemble"] else [])
    deltas = grid.get("delta", [cfg["query"]["delta"]] if "delta" in cfg["query"] else [])
    epss = grid.get("eps", [cfg["query"]["eps"]] if "eps" in cfg["query"] else [])
    source = CoveringSource.parse(cfg.get("covering_source", "proposition"))
    points = [(m, _ensemble(cfg, m), _query(cfg, d, e)) for m, d, e in itertools.product(ms, deltas, epss)]
    rows = []
    for m, ens, q in points:
        rep = failure_bound(spec, ens, q, source, rho_validity=cfg.get("rho_validity"),
                            acknowledge_unverified=cfg.get("acknowledge_unverified", False),
                            E=cfg.get("E", 2.0), strict=False)
        rows.append(rep.to_row())
    write_csv(out / "bounds.csv", REPORT_COLUMNS, rows)
    return rows


def cmd_concentration(cfg, out, seed, trials, threads):
    c = cfg["concentration"]
    grid = cfg.get("grid", {})
    rows = []
    rng = Rng(seed)
    for k, (delta, eps) in enumerate(itertools.product(grid.get("delta", []), grid.get("eps", []))):
        row = {"model": c["model"], "dist": c["dist"], "n1": c["n1"], "n2": c["n2"],
               "params": c["params"], "E": c.get("E", 2.0), "delta": delta, "eps": eps,
               "trials": trials}
        try:
            q = SmallBallQuery(c["model"], c["dist"], c["n1"], c["n2"], c["params"], delta, eps, c.get("E", 2.0))
        except ValueError as exc:
            row["error"] = str(exc)
            rows.append(row)
            continue
        row["bound"] = small_ball_bound(q)
        if trials > 0:
            X = boundary_witness(q, rng.child(2 * k).generator())
            est = small_ball_mc(q, X, trials, rng.child(2 * k + 1), threads=threads)
            row.update(estimate=est.estimate, ci_lower=est.lower, ci_upper=est.upper,
                       **{"pass": est.estimate <= row["bound"] + est.halfwidth})
        rows.append(row)
    write_csv(out / "concentration.csv", CONCENTRATION_COLUMNS, rows)
    return rows


def _read_records(path):
    done = {}
    if not path.exists():
        return done
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = TrialRecord.from_dict(json.loads(line))
            except (ValueError, TypeError):
                break  # a torn last line from an interrupted run
            done[(rec.m, rec.trial_id)] = rec
    return done


def cmd_simulate(cfg, out, seed, trials, threads, resume):
    spec = _build(spec_from_dict, cfg["constraint"], "constraint")
    q = _query(cfg)
    search = _search(cfg)
    ms = cfg.get("grid", {}).get("m", [cfg["ensemble"].get("m", 1)])
    source = CoveringSource.parse(cfg.get("covering_source", "proposition"))
    detector = cfg.get("detector", "search")
    ensembles = [_ensemble(cfg, m) for m in ms]
    if trials < 1:
        raise ConfigError("trials: must be at least 1 for simulate")
    path = out / "records.jsonl"
    done = _read_records(path) if resume else {}
    # rewrite so the file holds exactly the kept records, in order, before appending
    with open(path, "w", encoding="utf-8") as fh:
        for ens in ensembles:
            for k in range(trials):
                if (ens.m, k) in done:
                    fh.write(done[(ens.m, k)].to_json() + "\n")
    rows = []
    for ens in ensembles:
        prior = {k: rec for (m, k), rec in done.items() if m == ens.m and k < trials}
        with open(path, "a", encoding="utf-8") as fh:
            def emit(rec):
                fh.write(rec.to_json() + "\n")
                fh.flush()

            res = failure_rate_experiment(spec, ens, q, search, trials, Rng(seed, ens.m),
                                          detector=detector, threads=threads,
                                          x0_norm=cfg.get("x0_norm"), covering_source=source,
                                          done=prior, on_record=emit)
        row = {"variant": spec.variant, "model": ens.model.value, "dist": ens.dist.name,
               "kind": q.kind.value, "norm": q.norm_for(ens.model), "m": ens.m,
               "delta": q.delta, "eps": q.eps, "detector": detector}
        row.update(res.summary_row())
        rows.append(row)
    _sort_records(path)
    write_csv(out / "summary.csv", SIMULATE_COLUMNS, rows)
    return rows


def _sort_records(path):
    recs = _read_records(path)
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(recs):
            fh.write(recs[key].to_json() + "\n")


def cmd_recover(cfg, out, seed):
    spec = _build(spec_from_dict, cfg["constraint"], "constraint")
    ens = _ensemble(cfg)
    r = cfg.get("recover", {})
    rng = Rng(seed)
    op = draw_operator(ens, rng.child(0))
    X0 = None
    if r.get("y") is not None:
        y = np.asarray(r["y"], dtype=float)
        if y.shape != (op.m,):
            raise ConfigError(f"recover.y: dimension mismatch, length {y.size} but m={op.m}")
    else:
        if r.get("x0") is not None:
            X0 = np.asarray(r["x0"], dtype=float)
            if X0.shape != (ens.n1, ens.n2):
                raise ConfigError(f"recover.x0: dimension mismatch, shape {X0.shape} but {ens.n1}x{ens.n2}")
        else:
            X0 = sample_member(spec, rng.child(1).generator(), r.get("x0_norm", 1.0), on_sphere=True)
        y = op.apply(X0)
        if r.get("noise", 0.0) > 0:
            y = y + r["noise"] * rng.child(2).generator().standard_normal(op.m)
    solver = _build(lambda d: SolverConfig(**d), {k: r[k] for k in ("max_iters", "tol") if k in r}, "recover")
    res = recover(op, y, spec, r.get("radius"), solver)
    rel = None
    if X0 is not None:
        n0 = np.linalg.norm(X0)
        err = np.linalg.norm(res.estimate - X0)
        rel = float(err / n0) if n0 > 0 else float(err)
    doc = {"estimate": res.estimate.tolist(), "objective": res.objective, "iterations": res.iterations,
           "converged": res.converged, "rel_error": rel, "m": op.m, "seed": seed}
    (out / "estimate.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    row = {"m": op.m, "objective": res.objective, "iterations": res.iterations,
           "converged": res.converged, "rel_error": rel}
    write_csv(out / "recover.csv", RECOVER_COLUMNS, [row])
    return doc


def _default_threads():
    raw = os.environ.get("STABLEMR_THREADS")
    if raw is None:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        return None


def build_parser():
    p = argparse.ArgumentParser(prog="stablemr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("bounds", "failure-probability bounds over an (m, delta, eps) grid"),
                        ("concentration", "small-ball bounds next to Monte Carlo estimates"),
                        ("simulate", "Monte Carlo stability failure experiment"),
                        ("recover", "constrained least-squares recovery on a drawn instance")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="YAML or JSON run config")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
        s.add_argument("--trials", type=int, help="trial count (overrides config)")
        s.add_argument("--threads", type=int, help="worker threads; default $STABLEMR_THREADS or 1")
        s.add_argument("--out", help="output directory (overrides config)")
        s.add_argument("--resume", action="store_true", help="keep completed trials already in --out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        trials = args.trials if args.trials is not None else cfg.get("trials", 0)
        threads = args.threads or cfg.get("threads") or _default_threads() or 1
        if seed < 0:
            raise ConfigError("seed: must be nonnegative")
        if trials < 0:
            raise ConfigError("trials: must be nonnegative")
        out = Path(args.out or cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "bounds":
            cmd_bounds(cfg, out)
        elif args.command == "concentration":
            cmd_concentration(cfg, out, seed, trials, threads)
        elif args.command == "simulate":
            cmd_simulate(cfg, out, seed, trials if args.trials is not None or "trials" in cfg else 100,
                         threads, args.resume)
        else:
            cmd_recover(cfg, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
