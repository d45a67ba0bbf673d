"""Pure numpy implementation of the weighted logistic kernels.

Mirrors :mod:`tsclogit._kernels` (Cython) function for function; selected at
import when the compiled module is unavailable.
"""

import numpy as np


def _prepare(X, y, w, coef):
    eta = X @ coef
    bad = np.flatnonzero(~np.isfinite(eta))
    return eta, (int(bad[0]) if bad.size else -1)


def _loglik(eta, y, w):
    # y*eta - log(1 + e^eta), overflow-free
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    return float(w @ (y * eta - softplus))


def _expit(eta):
    e = np.exp(-np.abs(eta))
    return np.where(eta >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loglik(X, y, w, coef):
    """Weighted Bernoulli log-likelihood; returns ``(ll, bad_row)``."""
    eta, bad = _prepare(X, y, w, coef)
    if bad >= 0:
        return np.nan, bad
    return _loglik(eta, y, w), -1


def loglik_grad_hess(X, y, w, coef):
    """Weighted log-likelihood, score and Hessian.

    Returns ``(ll, grad, hess, bad_row)``; ``bad_row`` is the index of the
    first row with a non-finite linear predictor, or -1.
    """
    eta, bad = _prepare(X, y, w, coef)
    p = X.shape[1]
    if bad >= 0:
        return np.nan, np.full(p, np.nan), np.full((p, p), np.nan), bad
    mu = _expit(eta)
    grad = X.T @ (w * (y - mu))
    hess = -(X.T * (w * mu * (1.0 - mu))) @ X
    return _loglik(eta, y, w), grad, hess, -1
