"""Probability limits of the two-step and comparison estimators.

Each limit maximises an expected log-likelihood under the true model.  The
expectation over ``V ~ N(0, 1)`` is a Gauss-Hermite sum and the expectation
over the discrete variables is exact, so every population problem is again a
weighted logistic regression whose rows are (quadrature node, cell) pairs with
weights equal to their probabilities.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import logistic
from .errors import PrecisionError
from .model import CausalParams, ComplianceModel, Parametrization, causal_effect, design_matrix
from .truth import CHECK_NODES, NODES, TrueModelSpec, gh_normal, joint_table

__all__ = [
    "LimitResult",
    "population_eta_star",
    "pseudo_true_theta",
    "limits",
    "limit_curves",
    "write_curves_csv",
    "COV_M",
    "NULL_M",
]

COV_M = ("1", "v")
NULL_M = ("1",)
TOL = 1e-11
CURVE_COLUMNS = ("scenario", "rho", "delta0", "beta0", "estimator", "delta_star")


@dataclass(frozen=True)
class LimitResult:
    eta_star: np.ndarray
    theta_star: CausalParams
    delta_star: float
    gradient_norm: float
    comparisons: dict = field(default_factory=dict)


def _v_nodes(nodes):
    v, w = gh_normal(nodes)
    return v, w


def _with_m(spec, m):
    p = spec.param
    return Parametrization(p.a_terms, p.b_terms, m, p.covariates)


def population_eta_star(spec, param, nodes=NODES):
    """Limit of the step-1 estimator.

    With the inverse-probability weights ``Z / p(Z|V)`` the estimating
    equation reduces to ``E_V[(pibar(V) - expit(m(V)'eta)) m(V)] = 0`` where
    ``pibar(v) = E[pi_c(U, v) | V=v]``; it is solved by Newton on the
    quadrature-weighted logistic problem.
    """
    v, wv = _v_nodes(nodes)
    u, wu = spec.latent_nodes(v, nodes)
    pibar = spec.probabilities(u, v)["pi1"] @ wu
    M = param.m(v[:, None])
    prob = logistic.LogisticProblem(
        np.vstack([M, M]), np.r_[np.ones(nodes), np.zeros(nodes)], np.r_[wv * pibar, wv * (1 - pibar)]
    )
    return logistic.fit(prob, tol=TOL).coef


def _cell_rows(spec, nodes):
    """Discordant, complete cells at every v-node: (v, z, x, y2, weight)."""
    v, wv = _v_nodes(nodes)
    T = joint_table(spec, v, nodes)
    rows_v, rows_z, rows_x, rows_y, rows_w = [], [], [], [], []
    for z, x in ((0, 0), (1, 0), (1, 1)):
        for y2 in (0, 1):
            rows_v.append(v)
            rows_z.append(np.full(nodes, z))
            rows_x.append(np.full(nodes, x))
            rows_y.append(np.full(nodes, y2))
            rows_w.append(wv * T[:, 1 - y2, 1, z, x, y2, 1])
    return tuple(np.concatenate(a) for a in (rows_v, rows_z, rows_x, rows_y, rows_w))


def _fit_rows(X, y, w):
    res = logistic.fit(logistic.LogisticProblem(X, y, w), tol=TOL)
    return res.coef, res.grad_norm


def pseudo_true_theta(spec, param, eta_star, nodes=NODES, rows=None):
    """Maximiser of the expected second-step log-likelihood at ``eta_star``.

    Also returns the ITT and TR limits (slopes of ``Y2`` on ``(1, Z)`` and
    ``(1, X)`` over the same discordant complete cells).
    """
    v, z, x, y2, w = rows if rows is not None else _cell_rows(spec, nodes)
    V = v[:, None]
    comp = ComplianceModel(eta_star, param)
    W = design_matrix(param, comp.pi1(V), V, z, x)
    theta, gnorm = _fit_rows(W, y2, w)
    theta = CausalParams.from_theta(theta, param.p_a)
    ones = np.ones_like(v)
    itt, _ = _fit_rows(np.column_stack([ones, z]), y2, w)
    tr, _ = _fit_rows(np.column_stack([ones, x]), y2, w)
    return LimitResult(
        eta_star=np.asarray(eta_star, dtype=float),
        theta_star=theta,
        delta_star=causal_effect(param, theta, np.zeros(1)),
        gradient_norm=gnorm,
        comparisons={"itt": float(itt[1]), "tr": float(tr[1])},
    )


def limits(spec, nodes=NODES, check=False):
    """All four limits (``cov``, ``null``, ``itt``, ``tr``) for one true model.

    Returns the ``cov`` :class:`LimitResult` with the ``null`` result and the
    comparison slopes in ``comparisons``.  With ``check`` the ``cov`` limit is
    recomputed at 96 nodes and a relative change above 1e-8 raises
    :class:`PrecisionError`.
    """
    rows = _cell_rows(spec, nodes)
    out = {}
    for name, m in (("cov", COV_M), ("null", NULL_M)):
        param = _with_m(spec, m)
        eta = population_eta_star(spec, param, nodes)
        out[name] = pseudo_true_theta(spec, param, eta, nodes, rows)
    cov = out["cov"]
    if check:
        ref = limits(spec, CHECK_NODES if nodes != CHECK_NODES else NODES, check=False)
        rel = abs(ref.delta_star - cov.delta_star) / max(abs(ref.delta_star), 1e-12)
        if rel > 1e-8 and abs(ref.delta_star - cov.delta_star) > 1e-10:
            raise PrecisionError(f"limit changed by {rel:.2g} between quadrature orders")
    comparisons = dict(cov.comparisons)
    comparisons.update(cov=cov.delta_star, null=out["null"].delta_star, null_result=out["null"])
    return LimitResult(cov.eta_star, cov.theta_star, cov.delta_star, cov.gradient_norm, comparisons)


def limit_curves(rhos=(0.0, 0.75), delta0s=(0.0, 1.0), beta_grid=None, missing=False, nodes=NODES,
                 estimators=("null", "cov", "itt", "tr")):
    """Limit curves ``delta_star(beta0)`` as a list of row dicts."""
    if beta_grid is None:
        beta_grid = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.25), 10)
    scenario = "missing" if missing else "complete"
    out = []
    for rho in rhos:
        for d0 in delta0s:
            for b0 in beta_grid:
                spec = TrueModelSpec.from_delta(rho, d0, float(b0), missing=missing)
                res = limits(spec, nodes)
                for est in estimators:
                    out.append(dict(scenario=scenario, rho=float(rho), delta0=float(d0),
                                    beta0=float(b0), estimator=est,
                                    delta_star=float(res.comparisons[est])))
    return out


def write_curves_csv(rows, fh=None):
    """Write curve rows as CSV; returns the text when ``fh`` is None."""
    buf = fh if fh is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r["scenario"], repr(r["rho"]), repr(r["delta0"]), repr(r["beta0"]),
                    r["estimator"], f"{r['delta_star']:.12g}"])
    return buf.getvalue() if fh is None else None
