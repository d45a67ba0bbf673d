"""Monte Carlo data generator and study runner.

Every replicate draws from its own Philox stream keyed by
``(seed, replicate_index)``, so a study gives the same numbers for any number
of worker processes.  Within a replicate the draws are consumed in a fixed
order: an ``(n, 2)`` block of standard normals ``(v, s)`` followed by an
``(n, 6)`` block of uniforms for ``(y1, c, z, y2, r1, r2)``.
"""

import configparser
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import SchemaError, TSCLogitError
from .estimator import Dataset, EstimateOptions, comparison_fit, estimate
from .model import Parametrization
from .truth import TrueModelSpec

__all__ = [
    "Scenario",
    "StudyReport",
    "generate_dataset",
    "run_study",
    "load_scenarios",
    "VARIANTS",
    "RNG_NAME",
]

RNG_NAME = "numpy.random.Philox(key=seed + 2**64 * replicate_index)"
VARIANTS = ("cov", "null", "itt", "tr")
TWO_STEP_M = {"cov": ("1", "v1"), "null": ("1",)}
ESTIMANDS = ("alpha1", "alpha2", "beta", "delta")
REPORT_COLUMNS = ("variant", "estimand", "true", "bias", "sd", "mean_se", "n_ok", "failures",
                  "augmented_fraction")
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class Scenario:
    """One simulation design.

    Parameters
    ----------
    n : int
        Sample size per replicate.
    rho : float
        Correlation of the latent effect ``U`` with the covariate ``V``.
    alpha0, beta0 : sequence of float
        True causal parameters under the simple parametrization.
    replications : int
    seed : int
        Unsigned 64-bit master seed.
    missing : bool
        Draw response indicators from the missingness model.
    variants : tuple of str
        Estimators to run, any of ``cov`` (two-step, ``m(v) = (1, v)``),
        ``null`` (two-step, ``m(v) = 1``), ``itt`` and ``tr``.
    """

    n: int
    rho: float
    alpha0: tuple
    beta0: tuple
    replications: int = 1000
    seed: int = 0
    missing: bool = False
    variants: tuple = ("cov",)
    name: str = "scenario"

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("alpha0", tuple(float(a) for a in np.atleast_1d(self.alpha0)))
        set_("beta0", tuple(float(b) for b in np.atleast_1d(self.beta0)))
        set_("variants", tuple(self.variants))
        if int(self.n) < 1 or int(self.replications) < 1:
            raise SchemaError("n and replications must be at least 1")
        if not 0 <= int(self.seed) <= _U64:
            raise SchemaError("seed must be an unsigned 64-bit integer")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown or not self.variants:
            raise SchemaError(f"unknown estimator variants {sorted(unknown)}")
        set_("n", int(self.n))
        set_("replications", int(self.replications))
        set_("seed", int(self.seed))
        self.spec  # validates rho and parameter lengths

    @property
    def spec(self):
        return TrueModelSpec.logistic_normal(self.rho, self.alpha0, self.beta0, self.missing)

    @property
    def truth(self):
        a1, a2 = self.alpha0
        (b,) = self.beta0
        return {"alpha1": a1, "alpha2": a2, "beta": b, "delta": a2 - a1 - b}


def _rng(seed, index):
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(index) << 64)))


def generate_dataset(scenario, replicate_index, spec=None):
    """Draw one replicate.

    ``u`` and the never-taker status of control subjects are not emitted;
    ``pz`` holds ``p(Z = z_i | v_i)``.
    """
    spec = scenario.spec if spec is None else spec
    n = scenario.n
    rng = _rng(scenario.seed, replicate_index)
    normals = rng.standard_normal((n, 2))
    unif = rng.random((n, 6))
    v = normals[:, 0]
    u = spec.rho * v + math.sqrt(max(1.0 - spec.rho**2, 0.0)) * normals[:, 1]
    env = dict(u=u, v=v, rho=spec.rho)
    lam = spec.lam(shape=(n,), **env)
    y1 = (unif[:, 0] < expit(lam)).astype(np.int8)
    c = (unif[:, 1] < spec.pi_c(shape=(n,), **env)).astype(np.int8)
    pz1 = spec.pz(shape=(n,), v=v, rho=spec.rho)
    z = (unif[:, 2] < pz1).astype(np.int8)
    x = c * z
    y2 = (unif[:, 3] < expit(lam + spec.t(c, v, x))).astype(np.int8)
    if spec.missing:
        r1 = (unif[:, 4] < spec.r1(shape=(n,), **env)).astype(np.int8)
        r2 = (unif[:, 5] < spec.r2(shape=(n,), c=c.astype(float), x=x.astype(float), **env)).astype(np.int8)
    else:
        r1 = r2 = np.ones(n, dtype=np.int8)
    return Dataset(
        V=v[:, None], y1=y1, z=z, x=x, y2=y2, r1=r1, r2=r2,
        pz=np.where(z == 1, pz1, 1.0 - pz1), schema=("v1",),
    )


def _replicate(args):
    scenario, index = args
    data = generate_dataset(scenario, index)
    out = {}
    for variant in scenario.variants:
        try:
            if variant in TWO_STEP_M:
                param = Parametrization.simple(m=TWO_STEP_M[variant], covariates=("v1",))
                est = estimate(data, param, EstimateOptions())
                se = np.sqrt(np.clip(np.diag(est.sigma_theta), 0.0, None))
                a1, a2 = est.alpha
                (b,) = est.beta
                out[variant] = {
                    "est": {"alpha1": a1, "alpha2": a2, "beta": b, "delta": est.delta_hat()},
                    "se": {"alpha1": se[0], "alpha2": se[1], "beta": se[2], "delta": est.se_delta()},
                    "augmented": bool(est.diagnostics["augmentation"]),
                }
            else:
                slope, se = comparison_fit(data, "z" if variant == "itt" else "x")
                out[variant] = {"est": {"delta": slope}, "se": {"delta": se}, "augmented": False}
        except TSCLogitError as exc:
            out[variant] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


@dataclass(frozen=True)
class StudyReport:
    """Aggregated Monte Carlo summaries.

    ``rows`` holds one dict per (variant, estimand) with keys ``true``,
    ``bias``, ``sd``, ``mean_se``, ``n_ok``, ``failures`` and
    ``augmented_fraction``.  ``sd`` is ``None`` for a single replicate.
    """

    scenario: Scenario
    rows: tuple
    failures: dict = field(default_factory=dict)

    def row(self, variant, estimand):
        for r in self.rows:
            if r["variant"] == variant and r["estimand"] == estimand:
                return r
        raise KeyError((variant, estimand))

    def to_csv(self, fh=None):
        buf = fh if fh is not None else io.StringIO()
        s = self.scenario
        buf.write(f"# scenario={s.name} n={s.n} rho={s.rho!r} alpha0={list(s.alpha0)} "
                  f"beta0={list(s.beta0)} replications={s.replications} missing={s.missing}\n")
        buf.write(f"# rng={RNG_NAME} seed={s.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        fmt = lambda x: "NA" if x is None else f"{x:.6f}"
        for r in self.rows:
            w.writerow([r["variant"], r["estimand"], fmt(r["true"]), fmt(r["bias"]), fmt(r["sd"]),
                        fmt(r["mean_se"]), r["n_ok"], r["failures"], fmt(r["augmented_fraction"])])
        return buf.getvalue() if fh is None else None


def _aggregate(scenario, results):
    truth = scenario.truth
    rows, failures = [], {}
    for variant in scenario.variants:
        ok = [r[variant] for r in results if "error" not in r[variant]]
        errs = [r[variant]["error"] for r in results if "error" in r[variant]]
        failures[variant] = errs
        aug = math.fsum(o["augmented"] for o in ok) / len(ok) if ok else None
        for estimand in ESTIMANDS if variant in TWO_STEP_M else ("delta",):
            est = [o["est"][estimand] for o in ok]
            ses = [o["se"][estimand] for o in ok]
            k = len(est)
            mean = math.fsum(est) / k if k else None
            sd = math.sqrt(math.fsum((e - mean) ** 2 for e in est) / (k - 1)) if k > 1 else None
            rows.append({
                "variant": variant, "estimand": estimand, "true": truth[estimand],
                "bias": None if mean is None else mean - truth[estimand], "sd": sd,
                "mean_se": math.fsum(ses) / k if k else None, "n_ok": k, "failures": len(errs),
                "augmented_fraction": aug,
            })
    return StudyReport(scenario, tuple(rows), failures)


def run_study(scenario, workers=1):
    """Run all replicates and aggregate bias, st.dev. and mean s.e.

    Replicates whose estimator fails are excluded from the aggregates and
    counted.  The result does not depend on ``workers``.
    """
    jobs = [(scenario, i) for i in range(scenario.replications)]
    if workers <= 1:
        results = [_replicate(j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=chunk))
    return _aggregate(scenario, results)


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def load_scenarios(source):
    """Parse scenarios from INI text or a path.

    Each ``[scenario NAME]`` section holds ``n``, ``rho``, ``alpha0`` (two
    numbers), ``beta0`` and optionally ``replications``, ``seed``,
    ``missing`` and ``variants`` (comma separated).  Keys in ``[defaults]``
    apply to every section.
    """
    cp = configparser.ConfigParser(default_section="defaults")
    text = source.read() if hasattr(source, "read") else None
    if text is None:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SchemaError(f"invalid scenario file: {exc}") from None
    known = {"n", "rho", "alpha0", "beta0", "replications", "seed", "missing", "variants"}
    out = []
    for sec in cp.sections():
        if not sec.startswith("scenario"):
            raise SchemaError(f"unknown section [{sec}]")
        s = cp[sec]
        extra = set(s) - known
        if extra:
            raise SchemaError(f"[{sec}]: unknown keys {sorted(extra)}")
        try:
            out.append(Scenario(
                n=s.getint("n"), rho=s.getfloat("rho"), alpha0=_floats(s["alpha0"]),
                beta0=_floats(s["beta0"]), replications=s.getint("replications", 1000),
                seed=s.getint("seed", 0), missing=s.getboolean("missing", False),
                variants=tuple(t.strip() for t in s.get("variants", "cov").split(",") if t.strip()),
                name=sec.partition(" ")[2].strip() or sec,
            ))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"[{sec}]: {exc}") from None
    if not out:
        raise SchemaError("no [scenario ...] sections found")
    return out
