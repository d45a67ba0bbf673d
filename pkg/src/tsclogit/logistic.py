"""Weighted binary logistic regression by Newton's method.

Both estimation steps (the compliance model and the conditional likelihood for
the causal parameters) and the population-level pseudo-true computations are
weighted logistic problems, so they share this core.  The per-row
accumulation lives in :mod:`tsclogit._kernels` (compiled) with a numpy
fallback.
"""

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import NumericFailure, SchemaError, SeparationError, SingularMatrixError, ConvergenceError

__all__ = ["LogisticProblem", "FitResult", "loglik_grad_hess", "fit"]

TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 30
SEPARATION_NORM = 30.0
STEP_TOL = 1e-6
PIVOT_TOL = 1e-12
# ascent test slack: log-likelihood differences below this are rounding
ROUNDING_SLACK = 1e-13


@dataclass(frozen=True)
class LogisticProblem:
    """Rows ``(x_i, y_i, w_i)`` of a weighted logistic likelihood.

    Parameters
    ----------
    X : array_like, shape (n, dim)
    y : array_like, shape (n,)
        Binary responses.
    w : array_like, shape (n,)
        Nonnegative (frequency) weights; at least one must be positive.
    labels : sequence, optional
        Row labels used in error messages (defaults to row indices).
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    labels: tuple = field(default=None, compare=False)

    def __post_init__(self):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(self.X, dtype=float)))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float).ravel())
        w = np.ascontiguousarray(np.asarray(self.w, dtype=float).ravel())
        if X.ndim != 2 or X.shape[0] != y.size or w.size != y.size:
            raise SchemaError("design, response and weight lengths disagree")
        if X.shape[1] < 1:
            raise SchemaError("logistic problem needs dim >= 1")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise SchemaError("weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise SchemaError("logistic problem has no positively weighted rows")
        if np.any((y != 0) & (y != 1)):
            raise SchemaError("responses must be binary")
        for arr in (X, y, w):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_rows(cls, rows):
        """Build from an iterable of ``(design_vector, response, weight)``."""
        rows = list(rows)
        if not rows:
            raise SchemaError("logistic problem has no rows")
        X = np.array([np.atleast_1d(r[0]) for r in rows], dtype=float)
        return cls(X, [r[1] for r in rows], [r[2] for r in rows])

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]

    def _label(self, i):
        return self.labels[i] if self.labels is not None else i


@dataclass(frozen=True)
class FitResult:
    coef: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    hessian: np.ndarray = field(repr=False, default=None)
    loglik_path: tuple = field(repr=False, default=())


def loglik_grad_hess(p, coef):
    """Log-likelihood, score and Hessian of a :class:`LogisticProblem`.

    Returns
    -------
    ll : float
        ``sum w_i [y_i log mu_i + (1-y_i) log(1-mu_i)]``
    grad : ndarray
        ``sum w_i (y_i - mu_i) x_i``
    hess : ndarray
        ``-sum w_i mu_i (1-mu_i) x_i x_i'``
    """
    coef = np.ascontiguousarray(coef, dtype=float)
    if coef.shape != (p.dim,):
        raise SchemaError(f"coefficient vector has shape {coef.shape}, expected ({p.dim},)")
    ll, grad, hess, bad = kernels.loglik_grad_hess(p.X, p.y, p.w, coef)
    if bad >= 0:
        raise NumericFailure(f"non-finite linear predictor at row {p._label(bad)!r}")
    return ll, grad, hess


def _loglik(p, coef):
    ll, bad = kernels.loglik(p.X, p.y, p.w, coef)
    if bad >= 0:
        raise NumericFailure(f"non-finite linear predictor at row {p._label(bad)!r}")
    return ll


def _newton_step(hess, grad, coef):
    lam, vec = np.linalg.eigh(-hess)
    top = lam.max()
    if not top > 0 or lam.min() <= PIVOT_TOL * top:
        if np.linalg.norm(coef) > SEPARATION_NORM / 3:
            raise SeparationError(
                "Hessian degenerated while coefficients diverge (likely separation)"
            )
        raise SingularMatrixError(
            f"singular Hessian (eigenvalue ratio {lam.min() / top if top > 0 else 0:.3g})"
        )
    return vec @ ((vec.T @ grad) / lam)


def fit(p, init=None, tol=TOL, max_iter=MAX_ITER):
    """Maximise the weighted log-likelihood by Newton with step halving.

    Converged when the score max-norm is at most ``tol`` and the Newton step
    is below ``1e-6`` in max-norm; that last step is then applied as well.

    Raises
    ------
    SeparationError
        The coefficient norm exceeds 30 before convergence.
    SingularMatrixError
        The Hessian is singular (e.g. collinear columns).
    ConvergenceError
        No ascent step could be found, or ``max_iter`` was exhausted.
    """
    coef = np.zeros(p.dim) if init is None else np.array(init, dtype=float)
    ll, grad, hess = loglik_grad_hess(p, coef)
    path = [ll]
    converged = False
    it = 0
    while True:
        gnorm = float(np.max(np.abs(grad)))
        step = _newton_step(hess, grad, coef)
        if gnorm <= tol and np.max(np.abs(step)) <= STEP_TOL:
            converged = True
            # apply the last (tiny) step; ascent is quadratic here
            trial = coef + step
            ll_trial = _loglik(p, trial)
            if ll_trial >= ll - ROUNDING_SLACK * (1.0 + abs(ll)):
                coef = trial
                ll, grad, hess = loglik_grad_hess(p, coef)
                path.append(ll)
            break
        if np.linalg.norm(coef) > SEPARATION_NORM:
            raise SeparationError(
                f"coefficient norm {np.linalg.norm(coef):.1f} exceeds {SEPARATION_NORM:g} "
                "(complete or quasi-complete separation)"
            )
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations")
        it += 1
        t = 1.0
        slack = ROUNDING_SLACK * (1.0 + abs(ll))
        # predicted gain below rounding: the ascent test cannot judge the step
        trust = 0.5 * float(grad @ step) <= slack
        for _ in range(MAX_HALVINGS + 1):
            trial = coef + t * step
            ll_trial = _loglik(p, trial)
            if trust or ll_trial >= ll - slack:
                break
            t *= 0.5
        else:
            if gnorm <= tol:
                converged = True
                break
            raise ConvergenceError(
                f"no ascent step after {MAX_HALVINGS} halvings (|grad|={gnorm:.3g})"
            )
        coef = trial
        ll, grad, hess = loglik_grad_hess(p, coef)
        path.append(ll)
    return FitResult(
        coef=coef,
        loglik=float(ll),
        grad_norm=float(np.max(np.abs(grad))),
        iterations=it,
        converged=converged,
        hessian=hess,
        loglik_path=tuple(path),
    )
