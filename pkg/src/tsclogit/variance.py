"""Sandwich variance for the stacked two-step estimating equations.

The estimator solves ``s(eta, theta) = 0`` with

    s1 = sum_i (z_i / p(z_i|v_i)) (x_i - pi(1|v_i)) m(v_i)
    s2 = sum_i d_i (y_i2 - expit(w_i'theta)) w_i ,   w_i = w(v_i, z_i, x_i; eta)

and ``Sigma = H^{-1} K H'^{-1}`` where ``H`` is the Jacobian of ``s`` and
``K`` the sum of per-subject score outer products.  Record weights act as
frequency weights in every sum.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NumericalWarning, SchemaError, SingularMatrixError
from .model import CausalParams, ComplianceModel, design_matrix, effect_gradient

__all__ = [
    "SandwichParts",
    "stacked_score",
    "per_record_scores",
    "build_H",
    "build_K",
    "sandwich_cov",
    "sandwich_parts",
    "delta_se",
]

PIVOT_TOL = 1e-12


def _theta(theta):
    return theta.theta if isinstance(theta, CausalParams) else np.asarray(theta, dtype=float)


def _eta(compliance):
    return compliance.eta if isinstance(compliance, ComplianceModel) else np.asarray(compliance, dtype=float)


def _terms(data, param, eta, theta):
    V = data.V
    M = param.m(V)
    pi = expit(M @ eta)
    step1 = ((data.z == 1) & ~data.augmented).astype(float)
    d = data.discordant.astype(float)
    W = design_matrix(param, pi, V, data.z, data.x)
    if W.shape[1] != theta.size:
        raise SchemaError(f"theta has length {theta.size}, design has {W.shape[1]} columns")
    mu = expit(W @ theta)
    return dict(
        M=M, pi=pi, W=W, mu=mu, B=param.b(V),
        c1=step1 / data.pz,  # z_i / p(z_i|v_i), zero off the step-1 sample
        e1=data.x - pi,
        d=d, e2=d * (data.y2 - mu),
        omega=data.weight,
        ctrl=(1.0 - data.z),
    )


def per_record_scores(data, param, compliance, theta):
    """Unweighted per-subject scores ``u_i = (u_i1', u_i2')'`` as rows."""
    t = _terms(data, param, _eta(compliance), _theta(theta))
    return np.hstack([(t["c1"] * t["e1"])[:, None] * t["M"], t["e2"][:, None] * t["W"]])


def stacked_score(data, param, eta, theta):
    """``s(eta, theta)``, the weighted sum of per-subject scores."""
    return data.weight @ per_record_scores(data, param, np.asarray(eta, dtype=float), theta)


def build_H(data, param, compliance, theta):
    """Jacobian of the stacked score with respect to ``(eta', theta')``.

    Block lower triangular: the ``(eta, theta)`` block is exactly zero.  The
    cross block uses ``dw/deta' = [0; (1-z) pi0 pi1 b(v)] m(v)'``.
    """
    theta = _theta(theta)
    t = _terms(data, param, _eta(compliance), theta)
    M, W, B, om = t["M"], t["W"], t["B"], t["omega"]
    pq = t["pi"] * (1.0 - t["pi"])
    k, p_t, p_a = M.shape[1], W.shape[1], param.p_a
    beta = theta[p_a:]

    H11 = -(M.T * (om * t["c1"] * pq)) @ M

    v2 = t["mu"] * (1.0 - t["mu"]) * t["d"]
    H22 = -(W.T * (om * v2)) @ W

    # d w_i / d eta' has nonzero rows only in the beta block:
    #   (1 - z_i) pi0 pi1 b(v_i) m(v_i)'
    g = om * t["ctrl"] * pq
    H21 = np.zeros((p_t, k))
    H21[p_a:, :] = (B.T * (g * t["e2"])) @ M
    # - sum d mu(1-mu) w_i theta' dw_i/deta'
    H21 -= (W.T * (om * v2 * t["ctrl"] * pq * (B @ beta))) @ M

    H = np.zeros((k + p_t, k + p_t))
    H[:k, :k] = H11
    H[k:, :k] = H21
    H[k:, k:] = H22
    return H


def build_K(data, param, compliance, theta):
    """Outer-product estimate of the score covariance,
    ``K = sum_i weight_i u_i u_i'``."""
    U = per_record_scores(data, param, compliance, theta)
    K = (U.T * data.weight) @ U
    return 0.5 * (K + K.T)


def _check_block(H, lo, hi, name):
    blk = H[lo:hi, lo:hi]
    if blk.size == 0:
        return
    piv = np.abs(np.linalg.eigvals(blk))
    scale = max(np.abs(blk).max(), np.finfo(float).tiny)
    if piv.min() <= PIVOT_TOL * scale:
        raise SingularMatrixError(
            f"H is singular in the {name} block (smallest pivot {piv.min():.3g})"
        )


def sandwich_cov(H, K=None, p_eta=None):
    """``H^{-1} K (H')^{-1}``, computed by linear solves and symmetrised.

    ``H`` may also be a :class:`SandwichParts` instance.
    """
    if isinstance(H, SandwichParts):
        H, K, p_eta = H.H, H.K, H.p_eta
    H = np.asarray(H, dtype=float)
    K = np.asarray(K, dtype=float)
    if p_eta is None:
        _check_block(H, 0, H.shape[0], "full")
    else:
        _check_block(H, 0, p_eta, "eta-eta")
        _check_block(H, p_eta, H.shape[0], "theta-theta")
    try:
        A = np.linalg.solve(H, K)
        S = np.linalg.solve(H, A.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"H is singular: {exc}") from None
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class SandwichParts:
    H: np.ndarray
    K: np.ndarray
    p_eta: int = None

    @property
    def Sigma(self):
        return sandwich_cov(self.H, self.K, self.p_eta)


def sandwich_parts(data, param, compliance, theta):
    H = build_H(data, param, compliance, theta)
    K = build_K(data, param, compliance, theta)
    return SandwichParts(H, K, param.p_m)


def delta_se(estimate, param, v):
    """Delta-method standard error of ``delta_hat(v)``.

    ``estimate`` is a :class:`CausalEstimate` or directly the ``(theta,
    theta)`` covariance block.  Under the simple parametrization the gradient
    is ``(-1, 1, -1)``.
    """
    sig = estimate.sigma_theta if hasattr(estimate, "sigma_theta") else np.asarray(estimate, dtype=float)
    g = effect_gradient(param, v)
    q = float(g @ sig @ g)
    if q < 0:
        warnings.warn(f"negative variance {q:.3g} for delta clamped to zero", NumericalWarning)
        q = 0.0
    return float(np.sqrt(q))
