"""Exact cell probabilities of the generative model by Gauss-Hermite quadrature.

The latent effect ``U`` and the covariate ``V`` are jointly standard normal
with correlation ``rho``, so ``U | V=v ~ N(rho v, 1 - rho^2)``.  Given
``(u, v)``::

    Y1 ~ Bernoulli(expit(lambda(u, v)))
    C  ~ Bernoulli(pi_c(u, v))
    Z  ~ Bernoulli(pz(v)),  X = C Z
    Y2 ~ Bernoulli(expit(lambda(u, v) + t(c, v, x)))
    t(c, v, x) = a(v, x)'alpha0 + c (1 - x) b(v)'beta0

plus optional response indicators ``R1 ~ r1(u, v)`` and
``R2 ~ r2(u, v, c, x)``.  All model functions are :class:`~tsclogit.expr.Expr`
strings in ``u``, ``v``, ``rho`` (and ``c``, ``x`` for ``r2``).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import PrecisionError, SchemaError
from .expr import Expr
from .model import Parametrization

__all__ = [
    "TrueModelSpec",
    "CellTable",
    "gh_normal",
    "joint_table",
    "cell_table",
    "cell_probability",
    "correction_factor_h",
    "approx_control_logit",
    "NODES",
    "CHECK_NODES",
]

NODES = 64
CHECK_NODES = 96
REL_TOL = 1e-8

LAMBDA_DEFAULT = "(u + v)/sqrt(1 + rho**2) - 1"
PI_DEFAULT = "expit((u + v)/sqrt(1 + rho**2)/2)"
PZ_DEFAULT = "expit(-v)"
R1_DEFAULT = "expit(1 + (u + v)/sqrt(1 + rho)/2)"
R2_DEFAULT = "expit(1 + (u + v)/sqrt(1 + rho)/2 + c/2 + x/2)"


@lru_cache(maxsize=None)
def gh_normal(n):
    """Nodes and weights for ``E[g(S)]``, ``S ~ N(0, 1)``:
    ``E[g(S)] ~= sum_k w_k g(s_k)``."""
    s, w = np.polynomial.hermite.hermgauss(n)
    s = np.sqrt(2.0) * s
    w = w / np.sqrt(np.pi)
    s.flags.writeable = False
    w.flags.writeable = False
    return s, w


def _expr(e):
    return e if isinstance(e, Expr) or e is None else Expr(e)


@dataclass(frozen=True)
class TrueModelSpec:
    """Full generative specification with a single observable covariate."""

    rho: float
    alpha0: tuple
    beta0: tuple
    lam: Expr = LAMBDA_DEFAULT
    pi_c: Expr = PI_DEFAULT
    pz: Expr = PZ_DEFAULT
    r1: Expr = None
    r2: Expr = None
    param: Parametrization = field(default_factory=Parametrization.simple)

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise SchemaError("rho must lie in [-1, 1]")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("rho", float(self.rho))
        set_("alpha0", tuple(float(a) for a in np.atleast_1d(self.alpha0)))
        set_("beta0", tuple(float(b) for b in np.atleast_1d(self.beta0)))
        for k in ("lam", "pi_c", "pz", "r1", "r2"):
            set_(k, _expr(getattr(self, k)))
        if (self.r1 is None) != (self.r2 is None):
            raise SchemaError("missingness needs both r1 and r2")
        if len(self.param.covariates) != 1:
            raise SchemaError("the true model has exactly one observable covariate")
        if len(self.alpha0) != self.param.p_a or len(self.beta0) != self.param.p_b:
            raise SchemaError("alpha0/beta0 lengths do not match the parametrization")
        allowed = {"u": {"u", "v", "rho"}, "v": {"v", "rho"}, "r2": {"u", "v", "rho", "c", "x"}}
        for k, scope in (("lam", "u"), ("pi_c", "u"), ("pz", "v"), ("r1", "u"), ("r2", "r2")):
            e = getattr(self, k)
            if e is not None and not e.names <= allowed[scope]:
                raise SchemaError(f"{k} expression uses {sorted(e.names - allowed[scope])}")

    @classmethod
    def logistic_normal(cls, rho, alpha0, beta0, missing=False):
        """The simulation design with logistic-normal outcomes and
        covariate-dependent compliance; ``missing`` adds the response
        indicator model."""
        extra = {"r1": R1_DEFAULT, "r2": R2_DEFAULT} if missing else {}
        return cls(rho=rho, alpha0=alpha0, beta0=beta0, **extra)

    @classmethod
    def from_delta(cls, rho, delta0, beta0, missing=False):
        """``alpha2 = 1 + delta0`` and ``alpha1`` chosen so that
        ``alpha2 - alpha1 - beta0 = delta0``."""
        alpha2 = 1.0 + delta0
        return cls.logistic_normal(rho, (alpha2 - beta0 - delta0, alpha2), (beta0,), missing)

    @property
    def missing(self):
        return self.r1 is not None

    @property
    def delta0(self):
        from .model import causal_effect

        return causal_effect(self.param, np.r_[self.alpha0, self.beta0], np.zeros(1))

    def t(self, c, v, x):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        V = v[:, None]
        x = np.broadcast_to(np.asarray(x, dtype=float), v.shape)
        c = np.broadcast_to(np.asarray(c, dtype=float), v.shape)
        return self.param.a(V, x) @ np.asarray(self.alpha0) + c * (1 - x) * (
            self.param.b(V) @ np.asarray(self.beta0)
        )

    def latent_nodes(self, v, nodes=NODES):
        """``u`` quadrature nodes for each ``v`` (shape ``(nv, nodes)``) and
        their weights."""
        s, w = gh_normal(nodes)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        sd = np.sqrt(max(1.0 - self.rho**2, 0.0))
        return self.rho * v[:, None] + sd * s[None, :], w

    def probabilities(self, u, v):
        """Model probabilities on a grid ``u`` (nv, nq) with ``v`` (nv,)."""
        vv = np.broadcast_to(v[:, None], u.shape)
        env = dict(u=u, v=vv, rho=self.rho)
        lam = self.lam(shape=u.shape, **env)
        out = {
            "lam": lam,
            "pi1": self.pi_c(shape=u.shape, **env),
            "pz1": self.pz(shape=v.shape, v=v, rho=self.rho),
            "r1": None if self.r1 is None else self.r1(shape=u.shape, **env),
        }
        for c, x in ((0, 0), (1, 0), (1, 1)):
            t = self.t(c, v, x)[:, None]
            out[("y2", c, x)] = expit(lam + t)
            if self.r2 is not None:
                out[("r2", c, x)] = self.r2(shape=u.shape, c=float(c), x=float(x), **env)
        return out


def joint_table(spec, v, nodes=NODES):
    """Joint probabilities of ``(y1, r1, z, x, y2, r2)`` given each ``v``.

    Returns an array of shape ``(nv, 2, 2, 2, 2, 2, 2)``; the ``z=0, x=1``
    entries are structurally zero.  Without a missingness model all mass sits
    on ``r1 = r2 = 1``.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    u, w = spec.latent_nodes(v, nodes)
    P = spec.probabilities(u, v)
    py1 = expit(P["lam"])
    pi1 = P["pi1"]
    pz1 = P["pz1"]
    one = np.ones_like(u)
    pr1 = one if P["r1"] is None else P["r1"]
    out = np.zeros((v.size, 2, 2, 2, 2, 2, 2))

    def bern(p, k):
        return p if k == 1 else 1.0 - p

    def r_prob(r, c, x, which):
        if which == 1:
            return bern(pr1, r) if P["r1"] is not None else (one if r == 1 else 0 * one)
        if spec.r2 is None:
            return one if r == 1 else 0 * one
        return bern(P[("r2", c, x)], r)

    for y1 in (0, 1):
        for r1 in (0, 1):
            base = bern(py1, y1) * r_prob(r1, None, None, 1)
            for z, x in ((0, 0), (1, 0), (1, 1)):
                pz = bern(pz1, z)
                classes = (x,) if z == 1 else (0, 1)
                for y2 in (0, 1):
                    for r2 in (0, 1):
                        inner = 0.0
                        for c in classes:
                            inner = inner + bern(pi1, c) * bern(P[("y2", c, x)], y2) * r_prob(r2, c, x, 2)
                        out[:, y1, r1, z, x, y2, r2] = pz * ((base * inner) @ w)
    return out


@dataclass(frozen=True)
class CellTable:
    """Probabilities indexed by ``(y1, r1, z, x, y2, r2)`` at fixed ``v``."""

    p: np.ndarray
    v: float

    def fstar(self, y1, r1, z, x, y2, r2):
        return float(self.p[y1, r1, z, x, y2, r2])

    def f(self, y1, z, x, y2):
        """Marginal over the response indicators."""
        return float(self.p[y1, :, z, x, y2, :].sum())

    def total(self):
        return float(self.p.sum())


def _checked(fn, spec, v, nodes, check):
    val = fn(spec, v, nodes)
    if check:
        ref = fn(spec, v, CHECK_NODES if nodes != CHECK_NODES else NODES)
        err = np.abs(val - ref)
        lim = REL_TOL * np.maximum(np.abs(ref), 1e-300)
        if np.any(err > lim):
            raise PrecisionError(
                f"quadrature relative change {float(np.max(err / np.maximum(np.abs(ref), 1e-300))):.2g} "
                f"between {nodes} and {CHECK_NODES} nodes exceeds {REL_TOL:g}"
            )
    return val


def cell_table(spec, v, nodes=NODES, check=True):
    p = _checked(lambda s, vv, k: joint_table(s, vv, k)[0], spec, float(v), nodes, check)
    return CellTable(p, float(v))


def cell_probability(spec, v, y1, z, x, y2, r1=None, r2=None, nodes=NODES, check=True):
    """``f(y1, z, x, y2 | v)``, or ``f*(y1, r1, z, x, y2, r2 | v)`` when the
    response indicators are given."""
    if z == 0 and x == 1:
        raise SchemaError("(z, x) = (0, 1) is not observable")
    tab = cell_table(spec, v, nodes, check)
    if r1 is None and r2 is None:
        return tab.f(y1, z, x, y2)
    return tab.fstar(y1, 1 if r1 is None else r1, z, x, y2, 1 if r2 is None else r2)


def _h(spec, v, nodes):
    v = np.atleast_1d(float(v))
    u, w = spec.latent_nodes(v, nodes)
    P = spec.probabilities(u, v)
    t00 = spec.t(0, v, 0)[:, None]
    kern = expit(P["lam"]) * (1.0 - expit(P["lam"] + t00))
    return np.array([(kern * P["pi1"]) @ w, kern @ w])[:, 0]


def correction_factor_h(spec, v, nodes=NODES, check=True):
    """Correction factor multiplying ``b(v)'beta`` in the control-arm
    approximate logit; equals ``pi(1|v)`` when compliance is independent of
    ``U`` given ``V``."""
    num, den = _checked(_h, spec, v, nodes, check)
    return float(num / den)


def approx_control_logit(spec, v, nodes=NODES, check=True):
    """First-order approximation of the control-arm discordant log ratio.

    Returns
    -------
    approx : float
        ``a(v,0)'alpha0 + h(v) b(v)'beta0``
    exact : float
        ``log f(0,0,0,1|v) / f(1,0,0,0|v)`` (with ``r1 = r2 = 1`` under a
        missingness model).
    """
    v_arr = np.atleast_1d(float(v))
    V = v_arr[:, None]
    h = correction_factor_h(spec, v, nodes, check)
    a0 = float(spec.param.a(V, 0)[0] @ np.asarray(spec.alpha0))
    bb = float(spec.param.b(V)[0] @ np.asarray(spec.beta0))
    tab = cell_table(spec, v, nodes, check)
    exact = float(np.log(tab.fstar(0, 1, 0, 0, 1, 1) / tab.fstar(1, 1, 0, 0, 0, 1)))
    return a0 + h * bb, exact
