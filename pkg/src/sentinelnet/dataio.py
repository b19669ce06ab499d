"""
Readers and writers for dynamics CSV, truth sidecars and model files.

Floats are written with ``repr`` so that reading a file back and writing it
again reproduces it byte for byte. JSON is emitted with sorted keys, two
space indentation and a trailing newline.
"""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .dynsys import CONTINUOUS, DISCRETE, DynamicsMatrix, SyntheticTruth
from .errors import BadConfig
from .gsbl import LINEAR, LinearHyper, Posterior


def _fmt(v):
    return repr(float(v))


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def jsonable(x):
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


# -- dynamics CSV -------------------------------------------------------------

def dynamics_to_csv(d: DynamicsMatrix, header=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(d.component_ids)
    fmt = str if d.mode == DISCRETE else _fmt
    for row in d.values:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_dynamics(path, d, header=True):
    Path(path).write_text(dynamics_to_csv(d, header), encoding="utf-8")


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_dynamics(text, mode=None):
    """Parse a dynamics CSV; the header row is optional and detected.

    Without an explicit ``mode`` a panel is discrete when every cell is a
    bare ``0`` or ``1``.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise BadConfig("dynamics file is empty")
    ids = None
    if not all(_is_number(t) for t in rows[0]):
        ids, rows = rows[0], rows[1:]
    if not rows:
        raise BadConfig("dynamics file has a header but no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise BadConfig("dynamics rows have unequal lengths")
    try:
        values = np.array([[float(t) for t in r] for r in rows])
    except ValueError as exc:
        raise BadConfig(f"non-numeric dynamics entry: {exc}") from exc
    if mode is None:
        mode = DISCRETE if all(t in ("0", "1") for r in rows for t in r) else CONTINUOUS
    return DynamicsMatrix(values, mode, ids)


def read_dynamics(path, mode=None):
    return parse_dynamics(Path(path).read_text(encoding="utf-8"), mode)


def truth_path_for(dynamics_path):
    p = Path(dynamics_path)
    return p.with_name(p.stem + ".truth.json")


def write_truth(path, truth: SyntheticTruth):
    write_json(path, truth.to_json())


def read_truth(path):
    return SyntheticTruth.from_json(read_json(path))


def write_table(path, rows, columns):
    """Write dict rows as CSV with the given column order; missing cells stay empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (_fmt(r[c]) if isinstance(r[c], float) else r[c])
                    for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- model files -------------------------------------------------------------

def selection_to_model(sel, component_ids=None):
    post = sel.posterior_final
    hyper = sel.hyper_final
    ids = component_ids or [f"c{i}" for i in range(sel.n_components)]
    return jsonable({
        "kind": sel.kind,
        "basis": list(sel.basis),
        "n_components": sel.n_components,
        "component_ids": list(ids),
        "sentinels": sel.sentinels,
        "elimination_order": sel.elimination_order,
        "group_sizes": sel.group_sizes,
        "gamma": sel.gamma_final,
        "M": post.M,
        "Sigma": post.Sigma,
        "sigma_diag": post.sigma_diag(),
        "lambda": hyper.lam if isinstance(hyper, LinearHyper) else None,
    })


def model_posterior(model):
    """Rebuild ``(Posterior, lambda-or-None)`` from a model dict."""
    try:
        kind = model["kind"]
        M = np.asarray(model["M"], dtype=float).reshape(-1, model["n_components"])
        Sigma = np.asarray(model["Sigma"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise BadConfig(f"malformed model file: {exc}") from exc
    p = M.shape[0]
    expected = (p, p) if kind == LINEAR else (model["n_components"], p, p)
    if Sigma.shape != expected:
        Sigma = Sigma.reshape(expected)
    lam = model.get("lambda")
    return Posterior(M, Sigma, kind), (float(lam) if lam is not None else None)

