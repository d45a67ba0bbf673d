# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled weighted logistic kernels (see ``_fallback.py`` for the reference
numpy version; both must agree to rounding)."""

import numpy as np
from libc.math cimport exp, fabs, log1p, isfinite


def loglik(const double[:, ::1] X, const double[::1] y, const double[::1] w,
           const double[::1] coef):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j
    cdef double eta, ll = 0.0
    cdef const double* xi
    for i in range(n):
        xi = &X[i, 0]
        eta = 0.0
        for j in range(p):
            eta += xi[j] * coef[j]
        if not isfinite(eta):
            return np.nan, i
        # y*eta - softplus(eta)
        ll += w[i] * (y[i] * eta - (eta if eta > 0 else 0.0) - log1p(exp(-fabs(eta))))
    return ll, -1


def loglik_grad_hess(const double[:, ::1] X, const double[::1] y,
                     const double[::1] w, const double[::1] coef):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j, k
    cdef double eta, e, mu, r, q, ll = 0.0
    cdef const double* xi
    grad_arr = np.zeros(p)
    hess_arr = np.zeros((p, p))
    cdef double[::1] grad_v = grad_arr
    cdef double[:, ::1] hess_v = hess_arr
    cdef double* grad = &grad_v[0]
    cdef double* hess = &hess_v[0, 0]
    for i in range(n):
        xi = &X[i, 0]
        eta = 0.0
        for j in range(p):
            eta += xi[j] * coef[j]
        if not isfinite(eta):
            return np.nan, np.full(p, np.nan), np.full((p, p), np.nan), i
        e = exp(-fabs(eta))
        mu = 1.0 / (1.0 + e) if eta >= 0 else e / (1.0 + e)
        ll += w[i] * (y[i] * eta - (eta if eta > 0 else 0.0) - log1p(e))
        r = w[i] * (y[i] - mu)
        q = w[i] * mu * (1.0 - mu)
        for j in range(p):
            grad[j] += r * xi[j]
            for k in range(j + 1):
                hess[j * p + k] -= q * xi[j] * xi[k]
    for j in range(p):
        for k in range(j):
            hess[k * p + j] = hess[j * p + k]
    return ll, grad_arr, hess_arr, -1
