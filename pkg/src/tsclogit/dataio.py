"""Subject CSV ingestion, parametrization configs and estimate reports.

Subject files have a header row.  Recognised columns are ``id``,
covariates ``v1 .. vk``, ``y1``, ``z``, ``x``, ``y2`` and the optional
``r1``, ``r2``, ``pz`` and ``weight``.  A missing response is an empty field;
when ``r1``/``r2`` are absent they are inferred from emptiness, and when
present they must agree with it.
"""

import configparser
import csv
import json
import math
import re

import numpy as np
from scipy.stats import norm

from .errors import SchemaError
from .estimator import Dataset
from .model import Parametrization

__all__ = [
    "read_subjects",
    "write_subjects",
    "load_parametrization",
    "split_terms",
    "report_dict",
    "write_report",
]

REQUIRED = ("y1", "z", "x", "y2")
OPTIONAL = ("id", "r1", "r2", "pz", "weight")
_COVARIATE = re.compile(r"^v[1-9][0-9]*$")


def _binary(text, col, line, allow_empty=False):
    t = text.strip()
    if t == "" and allow_empty:
        return None
    if t in ("0", "1"):
        return int(t)
    shown = t if t else "<empty>"
    raise SchemaError(f"line {line}: column {col!r} must be 0 or 1, got {shown!r}")


def _real(text, col, line):
    try:
        val = float(text)
    except ValueError:
        raise SchemaError(f"line {line}: column {col!r} is not a number: {text.strip()!r}") from None
    if not math.isfinite(val):
        raise SchemaError(f"line {line}: column {col!r} is not finite")
    return val


def read_subjects(source, pz_constant=None):
    """Read a subject CSV into a :class:`Dataset`.

    Parameters
    ----------
    source : path or file object
    pz_constant : float, optional
        Assignment probability ``p(Z=1)`` used when the file has no ``pz``
        column; each row then gets ``pz`` or ``1 - pz`` according to ``z``.

    Raises
    ------
    SchemaError
        Unknown or missing columns, malformed rows (with line numbers),
        non-binary values, inconsistent response indicators.
    """
    if hasattr(source, "read"):
        return _read(source, pz_constant)
    with open(source, newline="", encoding="utf-8") as fh:
        return _read(fh, pz_constant)


def _read(fh, pz_constant):
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("subject file is empty") from None
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    covs = sorted((h for h in header if _COVARIATE.match(h)), key=lambda h: int(h[1:]))
    unknown = [h for h in header if h not in REQUIRED + OPTIONAL and not _COVARIATE.match(h)]
    if unknown:
        raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
    for col in REQUIRED:
        if col not in header:
            raise SchemaError(f"missing required column {col!r}")
    if covs != [f"v{j}" for j in range(1, len(covs) + 1)]:
        raise SchemaError(f"covariate columns must be v1..vk without gaps, got {covs}")
    if "pz" not in header and pz_constant is None:
        raise SchemaError("no 'pz' column; supply a constant assignment probability")
    if pz_constant is not None and not 0 < pz_constant < 1:
        raise SchemaError("constant pz must lie strictly inside (0, 1)")
    pos = {h: i for i, h in enumerate(header)}
    cols = {k: [] for k in ("id", "V", "y1", "z", "x", "y2", "r1", "r2", "pz", "weight")}
    for line, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"line {line}: expected {len(header)} fields, found {len(row)}")
        get = lambda c: row[pos[c]]
        ys = {}
        for k, r in (("y1", "r1"), ("y2", "r2")):
            y = _binary(get(k), k, line, allow_empty=True)
            rv = 1 if y is not None else 0
            if r in pos:
                rv_file = _binary(get(r), r, line)
                if rv_file != rv:
                    raise SchemaError(f"line {line}: {r}={rv_file} but {k} is "
                                      f"{'empty' if y is None else 'present'}")
            ys[k], ys[r] = (0 if y is None else y), rv
        z, x = _binary(get("z"), "z", line), _binary(get("x"), "x", line)
        if z == 0 and x == 1:
            raise SchemaError(f"line {line}: z=0 implies x=0 (one-sided non-compliance)")
        if "pz" in pos:
            pz = _real(get("pz"), "pz", line)
            if not 0 < pz < 1:
                raise SchemaError(f"line {line}: pz must lie strictly inside (0, 1)")
        else:
            pz = pz_constant if z == 1 else 1.0 - pz_constant
        w = _real(get("weight"), "weight", line) if "weight" in pos else 1.0
        if w < 0:
            raise SchemaError(f"line {line}: negative weight")
        cols["id"].append(get("id").strip() if "id" in pos else str(line - 1))
        cols["V"].append([_real(get(c), c, line) for c in covs])
        for k in ("y1", "y2", "r1", "r2"):
            cols[k].append(ys[k])
        cols["z"].append(z)
        cols["x"].append(x)
        cols["pz"].append(pz)
        cols["weight"].append(w)
    n = len(cols["z"])
    if n == 0:
        raise SchemaError("subject file has no data rows")
    return Dataset(
        V=np.array(cols["V"], dtype=float).reshape(n, len(covs)),
        y1=cols["y1"], z=np.array(cols["z"]), x=cols["x"], y2=cols["y2"],
        r1=cols["r1"], r2=cols["r2"], pz=cols["pz"], weight=cols["weight"],
        ids=tuple(cols["id"]), schema=tuple(covs),
    )


def write_subjects(data, fh):
    """Write a :class:`Dataset` in the subject CSV layout (real rows only)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("id", *data.schema, "y1", "z", "x", "y2", "r1", "r2", "pz"))
    for i in np.flatnonzero(~data.augmented):
        w.writerow((
            data.ids[i], *(repr(float(t)) for t in data.V[i]),
            data.y1[i] if data.r1[i] else "", data.z[i], data.x[i],
            data.y2[i] if data.r2[i] else "", data.r1[i], data.r2[i], repr(float(data.pz[i])),
        ))


def split_terms(text):
    """Split a comma-separated term list at top-level commas."""
    terms, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            terms.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    terms.append("".join(cur).strip())
    if any(not t for t in terms):
        raise SchemaError(f"empty term in {text!r}")
    return tuple(terms)


def load_parametrization(source, covariates):
    """Read ``[parametrization]`` with keys ``a``, ``b``, ``m`` from INI text,
    a file object or a path; missing keys fall back to the simple case with
    ``m = (1, v1, ..., vk)``."""
    cp = configparser.ConfigParser()
    try:
        if source is None:
            pass
        elif hasattr(source, "read"):
            cp.read_string(source.read())
        else:
            with open(source, encoding="utf-8") as fh:
                cp.read_string(fh.read())
    except configparser.Error as exc:
        raise SchemaError(f"invalid config: {exc}") from None
    sec = cp["parametrization"] if cp.has_section("parametrization") else {}
    extra = set(sec) - {"a", "b", "m"}
    if extra:
        raise SchemaError(f"[parametrization]: unknown keys {sorted(extra)}")
    a = split_terms(sec["a"]) if "a" in sec else ("1 - x", "x")
    b = split_terms(sec["b"]) if "b" in sec else ("1",)
    m = split_terms(sec["m"]) if "m" in sec else ("1", *covariates)
    return Parametrization(a, b, m, tuple(covariates))


def _row(name, term, est, se):
    t = est / se if se > 0 else None
    p = float(2.0 * norm.sf(abs(t))) if t is not None else None
    return {"parameter": name, "term": term, "estimate": float(est), "se": float(se), "t": t, "p": p}


def _param_names(param):
    names = [(f"eta{j + 1}", t.source) for j, t in enumerate(param.m_terms)]
    names += [(f"alpha{j + 1}", t.source) for j, t in enumerate(param.a_terms)]
    names += [(f"beta{j + 1}" if param.p_b > 1 else "beta", t.source) for j, t in enumerate(param.b_terms)]
    return names


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def report_dict(est, v=None):
    """Estimate report: parameter table (estimate, se, t, two-sided normal
    p-value), the causal effect at ``v``, the sandwich covariance and
    diagnostics."""
    param = est.param
    se = np.sqrt(np.clip(np.diag(est.sigma_hat), 0.0, None))
    coef = np.r_[est.eta_hat, est.theta_hat.theta]
    names = _param_names(param)
    rows = [_row(n, t, c, s) for (n, t), c, s in zip(names, coef, se)]
    v_eval = est.diagnostics["v_mean"] if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    delta = _row("delta", "causal effect", est.delta_hat(v_eval), est.se_delta(v_eval))
    delta["v"] = [float(t) for t in np.atleast_1d(v_eval)]
    return _jsonable({
        "parametrization": param.to_dict(),
        "coefficients": rows,
        "delta": delta,
        "covariance": {"labels": [n for n, _ in names], "matrix": est.sigma_hat},
        "diagnostics": est.diagnostics,
    })


def write_report(est, fh, v=None):
    """Write :func:`report_dict` as deterministic JSON (sorted keys)."""
    json.dump(report_dict(est, v), fh, indent=2, sort_keys=True, allow_nan=False)
    fh.write("\n")
