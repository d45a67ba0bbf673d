"""Domain types, parametrizations and the causal-effect functional.

The causal model links the logits of the two binary outcomes through

    logit P(Y2=1|u,v,c,x) - logit P(Y1=1|u,v) = a(v,x)'alpha + c(1-x) b(v)'beta

where ``c`` is the (latent) compliance class.  ``a``, ``b`` and the compliance
design ``m`` are supplied as :class:`Parametrization` objects built from
expression strings.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import SchemaError
from .expr import Expr

__all__ = [
    "SubjectRecord",
    "Parametrization",
    "CausalParams",
    "ComplianceModel",
    "CausalEstimate",
    "design_row",
    "design_matrix",
    "causal_effect",
    "effect_gradient",
]


def _is_binary(value):
    return value in (0, 1)


@dataclass(frozen=True)
class SubjectRecord:
    """One observed subject.

    ``y1``/``y2`` are ``None`` when not observed; in that case the matching
    response indicator ``r1``/``r2`` must be 0.
    """

    id: Any
    v: tuple
    y1: Optional[int]
    z: int
    x: int
    y2: Optional[int]
    r1: int = 1
    r2: int = 1
    pz: float = 0.5
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(t) for t in np.atleast_1d(self.v)))
        for name in ("z", "x", "r1", "r2"):
            if not _is_binary(getattr(self, name)):
                raise SchemaError(f"record {self.id!r}: {name} must be 0 or 1")
        if self.z == 0 and self.x == 1:
            raise SchemaError(f"record {self.id!r}: z=0 implies x=0")
        for y, r, name in ((self.y1, self.r1, "y1"), (self.y2, self.r2, "y2")):
            if r == 1 and not _is_binary(y):
                raise SchemaError(f"record {self.id!r}: {name} must be 0/1 when observed")
            if r == 0 and y is not None:
                raise SchemaError(f"record {self.id!r}: {name} present but flagged missing")
        if not 0.0 < self.pz < 1.0:
            raise SchemaError(f"record {self.id!r}: pz must lie in (0, 1)")
        if not self.weight >= 0.0:
            raise SchemaError(f"record {self.id!r}: weight must be nonnegative")


def _as_exprs(terms):
    if isinstance(terms, (str, Expr)):
        terms = [terms]
    return tuple(t if isinstance(t, Expr) else Expr(t) for t in terms)


@dataclass(frozen=True)
class Parametrization:
    """The design functions ``a(v, x)``, ``b(v)`` and ``m(v)``.

    Each function is a tuple of expressions, one per output component.
    Expressions may reference the covariate names in ``covariates`` (and,
    when there is exactly one covariate, the alias ``v``); ``a`` may also
    reference ``x``.

    Examples
    --------
    >>> p = Parametrization.simple(m=("1", "v1"))
    >>> p.a(np.array([0.3]), 1)
    array([0., 1.])
    """

    a_terms: tuple
    b_terms: tuple
    m_terms: tuple
    covariates: tuple = ("v1",)

    def __post_init__(self):
        object.__setattr__(self, "a_terms", _as_exprs(self.a_terms))
        object.__setattr__(self, "b_terms", _as_exprs(self.b_terms))
        object.__setattr__(self, "m_terms", _as_exprs(self.m_terms))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        known = set(self.covariates)
        if len(self.covariates) == 1:
            known.add("v")
        for label, terms, extra in (
            ("a", self.a_terms, {"x"}),
            ("b", self.b_terms, set()),
            ("m", self.m_terms, set()),
        ):
            if not terms:
                raise SchemaError(f"parametrization '{label}' needs at least one term")
            for t in terms:
                unknown = t.names - known - extra
                if unknown:
                    raise SchemaError(
                        f"parametrization '{label}' term {t.source!r} references "
                        f"unknown name(s) {sorted(unknown)}"
                    )
        object.__setattr__(self, "_simple", self._check_simple())

    @classmethod
    def simple(cls, m=("1",), covariates=("v1",)):
        """``a(v,x) = (1-x, x)'`` and ``b(v) = 1`` with a user-chosen ``m``."""
        return cls(("1 - x", "x"), ("1",), m, covariates)

    @property
    def p_a(self):
        return len(self.a_terms)

    @property
    def p_b(self):
        return len(self.b_terms)

    @property
    def p_m(self):
        return len(self.m_terms)

    @property
    def p_theta(self):
        return self.p_a + self.p_b

    @property
    def is_simple(self):
        return self._simple

    def _env(self, V):
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[1] != len(self.covariates):
            raise SchemaError(
                f"covariate matrix has {V.shape[-1] if V.ndim else 0} columns, "
                f"parametrization expects {len(self.covariates)}"
            )
        env = {name: V[:, j] for j, name in enumerate(self.covariates)}
        if len(self.covariates) == 1:
            env["v"] = V[:, 0]
        return env, V.shape[0]

    def _eval(self, terms, V, x=None):
        single = np.ndim(V) <= 1
        V2 = np.asarray(V, dtype=float).reshape(1, -1) if single else V
        env, n = self._env(V2)
        if x is not None:
            env["x"] = np.broadcast_to(np.asarray(x, dtype=float), (n,))
        out = np.column_stack([t(shape=(n,), **env) for t in terms]) if n else np.empty((0, len(terms)))
        return out[0] if single else out

    def a(self, V, x):
        """``a(v, x)``; ``V`` is one covariate vector or an ``(n, k)`` matrix."""
        return self._eval(self.a_terms, V, x)

    def b(self, V):
        return self._eval(self.b_terms, V)

    def m(self, V):
        return self._eval(self.m_terms, V)

    def _check_simple(self):
        if self.p_a != 2 or self.p_b != 1:
            return False
        rng = np.random.default_rng(0)
        V = rng.normal(size=(7, len(self.covariates))) * 3
        ones = np.ones(7)
        return (
            np.array_equal(self.a(V, 0), np.column_stack([ones, 0 * ones]))
            and np.array_equal(self.a(V, 1), np.column_stack([0 * ones, ones]))
            and np.array_equal(self.b(V), ones[:, None])
        )

    def to_dict(self):
        return {
            "a": [t.source for t in self.a_terms],
            "b": [t.source for t in self.b_terms],
            "m": [t.source for t in self.m_terms],
            "covariates": list(self.covariates),
        }


@dataclass(frozen=True)
class CausalParams:
    """``alpha`` and ``beta`` with ``theta`` their concatenation."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.array(self.alpha, dtype=float).ravel())
        object.__setattr__(self, "beta", np.array(self.beta, dtype=float).ravel())
        self.alpha.flags.writeable = False
        self.beta.flags.writeable = False

    @property
    def theta(self):
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_theta(cls, theta, p_a):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:p_a], theta[p_a:])


@dataclass(frozen=True)
class ComplianceModel:
    """Logit model for the probability of being a complier,
    ``logit pi(1|v) = m(v)'eta``."""

    eta: np.ndarray
    param: Parametrization

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).ravel()
        if eta.size != self.param.p_m:
            raise SchemaError(f"eta has length {eta.size}, m(v) has {self.param.p_m} terms")
        eta.flags.writeable = False
        object.__setattr__(self, "eta", eta)

    def pi1(self, V):
        """``pi(1|v)`` for one covariate vector or an ``(n, k)`` matrix."""
        return expit(self.param.m(V) @ self.eta)


def design_matrix(param, pi1, V, z, x):
    """Second-step design rows ``w(v_i, z_i, x_i)`` stacked into a matrix.

    Treatment-arm rows are ``(a(v, x)', 0')``; control-arm rows are
    ``(a(v, 0)', pi(1|v) b(v)')``.

    Parameters
    ----------
    param : Parametrization
    pi1 : ndarray, shape (n,)
        Compliance probabilities ``pi(1|v_i)``.
    V : ndarray, shape (n, k)
    z, x : ndarray, shape (n,)
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((z == 0) & (x == 1)):
        raise SchemaError("design row requested with z=0 and x=1")
    A = param.a(V, x)
    B = param.b(V) * ((1.0 - z) * np.asarray(pi1, dtype=float))[:, None]
    return np.hstack([A, B])


def design_row(param, compliance, v, z, x):
    """Design vector ``w(v, z, x)`` of length ``p_a + p_b`` for one subject."""
    if z == 0 and x == 1:
        raise SchemaError("design row requested with z=0 and x=1")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    a = param.a(v, x)
    b = param.b(v)
    if a.shape != (param.p_a,) or b.shape != (param.p_b,):
        raise SchemaError("parametrization output does not match declared lengths")
    scale = 0.0 if z == 1 else float(compliance.pi1(v))
    return np.concatenate([a, scale * b])


def effect_gradient(param, v):
    """Gradient of ``delta(v)`` with respect to ``theta``:
    ``([a(v,1) - a(v,0)]', -b(v)')'``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.concatenate([param.a(v, 1) - param.a(v, 0), -param.b(v)])


def causal_effect(param, theta, v):
    """Causal effect for compliers on the logit scale,
    ``delta(v) = [a(v,1) - a(v,0)]'alpha - b(v)'beta``."""
    if isinstance(theta, CausalParams):
        theta = theta.theta
    return float(effect_gradient(param, v) @ np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class CausalEstimate:
    """Result of the two-step estimator.

    ``sigma_hat`` is the sandwich covariance over ``(eta, theta)``; the
    ``(theta, theta)`` block is exposed as :attr:`sigma_theta`.
    """

    eta_hat: np.ndarray
    theta_hat: CausalParams
    sigma_hat: np.ndarray
    param: Parametrization
    diagnostics: dict = field(default_factory=dict)

    @property
    def p_eta(self):
        return self.eta_hat.size

    @property
    def sigma_theta(self):
        k = self.p_eta
        return self.sigma_hat[k:, k:]

    @property
    def alpha(self):
        return self.theta_hat.alpha

    @property
    def beta(self):
        return self.theta_hat.beta

    def delta_hat(self, v=None):
        """Estimated causal effect at ``v`` (defaults to the sample mean of
        the covariates)."""
        if v is None:
            v = self.diagnostics.get("v_mean", np.zeros(len(self.param.covariates)))
        return causal_effect(self.param, self.theta_hat, v)

    def se_delta(self, v=None):
        from .variance import delta_se

        if v is None:
            v = self.diagnostics.get("v_mean", np.zeros(len(self.param.covariates)))
        return delta_se(self, self.param, v)
