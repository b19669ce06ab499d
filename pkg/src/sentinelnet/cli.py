"""
Command line harness: generate, select, predict-eval and sweep.

Every subcommand reads a JSON config (validated against a schema that
rejects unknown keys) and writes its artifacts into ``--out``. Result files
contain no wall-clock data so identical inputs give byte-identical outputs;
timings go to a separate ``timing.json``.

Exit codes: 0 success, 1 config error, 2 runtime or numerical error, 3 IO error.
"""
import argparse
import itertools
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import dataio
from .dynsys import (LINEAR, LOGISTIC, BASIS_REGISTRY, SyntheticConfig,
                     contiguous_folds, fold_split, generate_synthetic,
                     make_lag_pair)
from .errors import BadConfig, DimensionMismatch, SentinelError
from .gsbl import FitControl
from .predict import SurveillanceRow, failure_rate, rmse, rmse_paper, rollout
from .snma import SnmaConfig, run_snma

logger = logging.getLogger("sentinelnet")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

_basis = {"type": "array", "items": {"enum": sorted(BASIS_REGISTRY)}, "minItems": 1}
_fit = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iters": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "gamma_floor": {"type": "number", "exclusiveMinimum": 0},
        "init": {"enum": ["default", "random"]},
    },
}
_window = {"type": "array", "items": {"type": "integer", "minimum": 0},
           "minItems": 2, "maxItems": 2}
_generator_props = {
    "n_components": {"type": "integer", "minimum": 1},
    "n_sentinels": {"type": "integer", "minimum": 1},
    "kind": {"enum": [LINEAR, LOGISTIC]},
    "sigma_big2": {"type": "number", "exclusiveMinimum": 0},
    "sigma_small2": {"type": "number", "minimum": 0},
    "basis": _basis,
    "noise_model": {"enum": ["process", "observation"]},
}

SCHEMAS = {
    "generate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["n_components", "n_sentinels"],
        "properties": {
            **_generator_props,
            "T": {"type": "integer", "minimum": 2},
            "t_over_n": {"type": "number", "exclusiveMinimum": 0},
            "snr_db": {"type": ["number", "null"]},
            "ber": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            "seed": {"type": "integer", "minimum": 0},
            "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        },
    },
    "select": {
        "type": "object",
        "additionalProperties": False,
        "required": ["dynamics", "k"],
        "properties": {
            "dynamics": {"type": "string"},
            "truth": {"type": "string"},
            "k": {"type": "integer", "minimum": 1},
            "kind": {"enum": [LINEAR, LOGISTIC]},
            "basis": _basis,
            "train_window": _window,
            "fit": _fit,
            "warm_start_noise": {"type": "boolean"},
            "seed": {"type": "integer", "minimum": 0},
        },
    },
    "predict-eval": {
        "type": "object",
        "additionalProperties": False,
        "required": ["model", "dynamics"],
        "properties": {
            "model": {"type": "string"},
            "dynamics": {"type": "string"},
            "window": _window,
        },
    },
    "sweep": {
        "type": "object",
        "additionalProperties": False,
        "required": ["n_components", "n_sentinels", "k", "seeds"],
        "properties": {
            **_generator_props,
            "t_over_n": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 1},
            "snr_db": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 1},
            "ber": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                    "minItems": 1},
            "k": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0},
                      "minItems": 1},
            "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "cv_folds": {"type": "integer", "minimum": 2},
            "fit": _fit,
            "warm_start_noise": {"type": "boolean"},
        },
    },
}


class IoError(SentinelError, OSError):
    pass


def load_config(path, command):
    try:
        cfg = dataio.read_json(path)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise BadConfig(f"config error at {where}: {exc.message}") from exc
    return cfg


def _fit_control(cfg):
    return FitControl(**cfg.get("fit", {}))


def _resolve(base, path):
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


def _read_dynamics(path):
    try:
        return dataio.read_dynamics(path)
    except OSError as exc:
        raise IoError(f"cannot read dynamics {path}: {exc}") from exc


def _selection_record(sel, truth=None):
    rec = {
        "sentinels": sorted(int(i) for i in sel.sentinels),
        "elimination_order": sel.elimination_order,
        "gamma": sel.gamma_final,
        "rounds": [{"removed": r.removed, "converged": r.converged, "n_iter": r.n_iter}
                   for r in sel.trace],
        "converged": sel.converged,
    }
    if truth is not None:
        rec["failure_rate"] = failure_rate(truth.sentinels, sel.sentinels)
    return rec


# -- subcommands -------------------------------------------------------------

def cmd_generate(cfg, out, seed=None, threads=1):
    params = {k: v for k, v in cfg.items() if k != "name"}
    if seed is not None:
        params["seed"] = seed
    syn = SyntheticConfig(**params)
    d, truth = generate_synthetic(syn)
    name = cfg.get("name", "dynamics")
    dyn_path = out / f"{name}.csv"
    dataio.write_dynamics(dyn_path, d)
    dataio.write_truth(dataio.truth_path_for(dyn_path), truth)
    return {"dynamics": dyn_path.name, "truth": dataio.truth_path_for(dyn_path).name,
            "T": d.T, "N": d.N, "seed": syn.seed}, {}


def cmd_select(cfg, out, seed=None, threads=1, base=Path(".")):
    dyn_path = _resolve(base, cfg["dynamics"])
    d = _read_dynamics(dyn_path)
    kind = cfg.get("kind", LOGISTIC if d.mode == "discrete" else LINEAR)
    if kind == LOGISTIC:
        basis = cfg.get("basis", ["quadratic"])
    else:
        basis = cfg.get("basis", ["identity"])
    if "train_window" in cfg:
        start, stop = cfg["train_window"]
        if not start < stop <= d.T:
            raise BadConfig(f"train_window {cfg['train_window']} outside 0..{d.T}")
        d_train = d.window(start, stop)
    else:
        d_train = d
    if cfg["k"] > d.N:
        raise BadConfig(f"k={cfg['k']} exceeds the {d.N} components")
    run_seed = seed if seed is not None else cfg.get("seed", 0)
    scfg = SnmaConfig(cfg["k"], kind, _fit_control(cfg), basis, run_seed,
                      cfg.get("warm_start_noise", True))
    sel = run_snma(d_train, scfg)
    truth_path = _resolve(base, cfg["truth"]) if "truth" in cfg else dataio.truth_path_for(dyn_path)
    truth = None
    if truth_path.exists():
        try:
            truth = dataio.read_truth(truth_path)
        except OSError as exc:
            raise IoError(f"cannot read truth {truth_path}: {exc}") from exc
    elif "truth" in cfg:
        raise IoError(f"truth file {truth_path} does not exist")
    dataio.write_json(out / "model.json", dataio.selection_to_model(sel, d.component_ids))
    rec = {"config": cfg, "seed": run_seed, "kind": kind, **_selection_record(sel, truth)}
    timing = {"rounds_seconds": [r.seconds for r in sel.trace]}
    return rec, timing


def _evaluate(post, lam, d_test, sentinels, basis):
    if d_test.T < 2:
        raise BadConfig("an evaluation window needs at least 2 time points")
    rows = SurveillanceRow.from_panel(d_test.values[:-1], sentinels)
    out = rollout(post, lam, rows, basis)
    target = d_test.values[1:].astype(float)
    scores = {"rmse_paper": rmse_paper(target, out.point), "rmse": rmse(target, out.point),
              "n_steps": int(target.shape[0])}
    if post.kind == LOGISTIC:
        scores["accuracy"] = float(np.mean((out.point > 0.5) == (target > 0.5)))
    return scores, out.point


def cmd_predict_eval(cfg, out, seed=None, threads=1, base=Path(".")):
    model_path = _resolve(base, cfg["model"])
    try:
        model = dataio.read_json(model_path)
    except OSError as exc:
        raise IoError(f"cannot read model {model_path}: {exc}") from exc
    post, lam = dataio.model_posterior(model)
    d = _read_dynamics(_resolve(base, cfg["dynamics"]))
    if d.N != model["n_components"]:
        raise DimensionMismatch(
            f"model has {model['n_components']} components, dynamics has {d.N}")
    start, stop = cfg.get("window", [0, d.T])
    if not start < stop <= d.T:
        raise BadConfig(f"window {[start, stop]} outside 0..{d.T}")
    tick = time.perf_counter()
    scores, pred = _evaluate(post, lam, d.window(start, stop), model["sentinels"],
                             model["basis"])
    seconds = time.perf_counter() - tick
    table = [dict(zip(["t", *d.component_ids], [start + 1 + i, *map(float, row)]))
             for i, row in enumerate(pred)]
    dataio.write_table(out / "predictions.csv", table, ["t", *d.component_ids])
    rec = {"config": cfg, "kind": post.kind, "sentinels": model["sentinels"], **scores}
    return rec, {"predict_seconds": seconds}


def _sweep_cell(job):
    """One (grid point, seed): generate, select along one path, score every k."""
    cfg, cell = job
    key = dict(cell)
    try:
        gen = {k: cfg[k] for k in _generator_props if k in cfg}
        gen.update(t_over_n=cell["t_over_n"], seed=cell["seed"])
        if "snr_db" in cell:
            gen["snr_db"] = cell["snr_db"]
        if "ber" in cell:
            gen["ber"] = cell["ber"]
        d, truth = generate_synthetic(SyntheticConfig(**gen))
        kind = cfg.get("kind", LINEAR)
        ks = sorted(k for k in cfg["k"] if k <= d.N)
        if not ks:
            raise BadConfig(f"no k in {cfg['k']} fits {d.N} components")
        scfg = SnmaConfig(ks[0], kind, _fit_control(cfg), gen.get("basis") or
                          (["quadratic"] if kind == LOGISTIC else ["identity"]),
                          cell["seed"], cfg.get("warm_start_noise", True))
        if "cv_folds" in cfg:
            splits = [fold_split(d, a, b, scfg.basis) for a, b in
                      contiguous_folds(d.T, cfg["cv_folds"])]
        else:
            cut = int(round(cfg.get("train_fraction", 0.8) * d.T))
            if cut < 2 or d.T - cut < 2:
                raise BadConfig(f"train_fraction leaves too few time points of {d.T}")
            splits = [(make_lag_pair(d.window(0, cut), scfg.basis), d.window(cut, d.T))]
        per_k = {k: [] for k in ks}
        seconds = {k: 0.0 for k in ks}
        for train, test in splits:
            tick = time.perf_counter()
            sels = run_snma(train, scfg, keep_at=ks)
            elapsed = time.perf_counter() - tick
            for k in ks:
                sel = sels[k]
                lam = getattr(sel.hyper_final, "lam", None)
                scores, _ = _evaluate(sel.posterior_final, lam, test, sel.sentinels, scfg.basis)
                scores["failure_rate"] = failure_rate(truth.sentinels, sel.sentinels)
                scores["converged"] = sel.converged
                per_k[k].append(scores)
                seconds[k] += elapsed
        records = []
        for k in ks:
            folds = per_k[k]
            rec = {**key, "k": k}
            for m in folds[0]:
                vals = [f[m] for f in folds]
                rec[m] = all(vals) if m == "converged" else float(np.mean(vals))
            rec["n_steps"] = int(sum(f["n_steps"] for f in folds))
            records.append((rec, seconds[k]))
        return records
    except (SentinelError, ArithmeticError, ValueError) as exc:
        return [({**key, "k": None, "error": f"{type(exc).__name__}: {exc}"}, 0.0)]


def _grid(cfg):
    kind = cfg.get("kind", LINEAR)
    if kind == LINEAR and "ber" in cfg:
        raise BadConfig("ber applies to logistic sweeps only")
    if kind == LOGISTIC and "snr_db" in cfg:
        raise BadConfig("snr_db applies to linear sweeps only")
    noise_key = "snr_db" if kind == LINEAR else "ber"
    axes = {"t_over_n": cfg.get("t_over_n", [4.0]), noise_key: cfg.get(noise_key, [None])}
    names = list(axes)
    cells = []
    for values in itertools.product(*(axes[n] for n in names)):
        for seed in cfg["seeds"]:
            cells.append({**dict(zip(names, values)), "seed": seed})
    return cells, names


def cmd_sweep(cfg, out, seed=None, threads=1, base=Path(".")):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seeds"] = [seed]
    cells, axes = _grid(cfg)
    jobs = [(cfg, c) for c in cells]
    tick = time.perf_counter()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    records, timing = [], []
    for res in results:
        for rec, secs in res:
            records.append(dataio.jsonable(rec))
            timing.append({**{a: rec.get(a) for a in axes}, "seed": rec["seed"],
                           "k": rec.get("k"), "seconds": secs})
    metrics = ["failure_rate", "rmse_paper", "rmse", "accuracy"]
    groups = {}
    for rec in records:
        if "error" in rec:
            continue
        groups.setdefault(tuple(rec[a] for a in axes) + (rec["k"],), []).append(rec)
    aggregate = []
    for key in sorted(groups, key=lambda t: tuple((v is None, v) for v in t)):
        rows = groups[key]
        agg = dict(zip([*axes, "k"], key))
        agg["n_seeds"] = len(rows)
        for m in metrics:
            if m in rows[0]:
                agg[m] = float(np.mean([r[m] for r in rows]))
        aggregate.append(agg)
    columns = [*axes, "k", "n_seeds"] + [m for m in metrics if aggregate and m in aggregate[0]]
    dataio.write_table(out / "aggregate.csv", aggregate, columns)
    rec_columns = [*axes, "seed", "k", *metrics, "converged", "n_steps", "error"]
    dataio.write_table(out / "records.csv", records, rec_columns)
    n_failed = sum("error" in r for r in records)
    summary = {"config": cfg, "n_records": len(records), "n_failed": n_failed,
               "records": records}
    return summary, {"total_seconds": time.perf_counter() - tick, "records": timing}


COMMANDS = {
    "generate": cmd_generate,
    "select": cmd_select,
    "predict-eval": cmd_predict_eval,
    "sweep": cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sentinelnet",
                                     description="Mine and evaluate sentinel networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweep")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise BadConfig("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        raise BadConfig("--threads must be at least 1")
    cfg = load_config(args.config, args.command)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    kwargs = {} if args.command == "generate" else {"base": Path(args.config).parent}
    try:
        record, timing = COMMANDS[args.command](cfg, out, args.seed, args.threads, **kwargs)
        dataio.write_json(out / "result.json", dataio.jsonable(record))
        if timing:
            dataio.write_json(out / "timing.json", dataio.jsonable(timing))
    except OSError as exc:
        if isinstance(exc, IoError):
            raise
        raise IoError(str(exc)) from exc
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SentinelError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
