"""Two-step conditional logistic estimator and its comparison estimators.

Step 1 fits the compliance model on the treatment arm (where compliance is
observed) with inverse assignment-probability weights.  Step 2 maximises the
conditional likelihood of ``Y2`` given ``Y1 + Y2 = 1`` over discordant
subjects observed at both occasions, where control-arm rows carry the
correction ``pi(1|v) b(v)'beta`` evaluated at the step-1 estimate.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import logistic
from ._backend import BACKEND
from .errors import EstimationError, SchemaError, TSCLogitError, UndefinedRatioError
from .model import CausalEstimate, CausalParams, ComplianceModel, SubjectRecord, design_matrix

__all__ = [
    "Dataset",
    "DiscordantCounts",
    "EstimateOptions",
    "discordant_counts",
    "step1_compliance",
    "augment_discordant",
    "step2_conditional",
    "closed_form_alphas",
    "itt_tr_estimates",
    "comparison_fit",
    "estimate",
]

OBSERVABLE_ARMS = ((0, 0), (1, 0), (1, 1))
DISCORDANT = ((0, 1), (1, 0))


def _int01(values, name, n):
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise SchemaError(f"column {name!r} has shape {arr.shape}, expected ({n},)")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        bad = int(np.flatnonzero((arr != 0) & (arr != 1))[0])
        raise SchemaError(f"column {name!r}: non-binary value at row {bad}")
    return arr.astype(np.int8)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented collection of subjects.

    Missing responses are stored as 0 in ``y1``/``y2`` with the matching
    indicator ``r1``/``r2`` equal to 0.  ``augmented`` marks synthetic rows
    added by :func:`augment_discordant`.
    """

    V: np.ndarray
    y1: np.ndarray
    z: np.ndarray
    x: np.ndarray
    y2: np.ndarray
    r1: np.ndarray = None
    r2: np.ndarray = None
    pz: np.ndarray = None
    weight: np.ndarray = None
    augmented: np.ndarray = None
    ids: tuple = None
    schema: tuple = ("v1",)

    def __post_init__(self):
        z = np.asarray(self.z)
        n = z.shape[0] if z.ndim == 1 else -1
        if n < 0:
            raise SchemaError("z must be one-dimensional")
        schema = tuple(self.schema)
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 1 and len(schema) == 1:
            V = V[:, None]
        if V.size == 0:
            V = V.reshape(n, len(schema))
        if V.shape != (n, len(schema)):
            raise SchemaError(f"covariates have shape {V.shape}, schema has {len(schema)} names")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        ones = np.ones(n, dtype=np.int8)
        r1 = ones if self.r1 is None else _int01(self.r1, "r1", n)
        r2 = ones if self.r2 is None else _int01(self.r2, "r2", n)
        y1 = _int01(np.where(r1 == 1, self.y1, 0), "y1", n)
        y2 = _int01(np.where(r2 == 1, self.y2, 0), "y2", n)
        z = _int01(z, "z", n)
        x = _int01(self.x, "x", n)
        if np.any((z == 0) & (x == 1)):
            bad = int(np.flatnonzero((z == 0) & (x == 1))[0])
            raise SchemaError(f"row {bad}: z=0 implies x=0 (one-sided non-compliance)")
        pz = np.full(n, 0.5) if self.pz is None else np.broadcast_to(np.asarray(self.pz, dtype=float), (n,)).copy()
        if n and not np.all((pz > 0) & (pz < 1)):
            raise SchemaError("pz must lie strictly inside (0, 1)")
        weight = np.ones(n) if self.weight is None else np.broadcast_to(np.asarray(self.weight, dtype=float), (n,)).copy()
        if n and not np.all(weight >= 0):
            raise SchemaError("weights must be nonnegative")
        aug = np.zeros(n, dtype=bool) if self.augmented is None else np.asarray(self.augmented, dtype=bool)
        ids = tuple(range(n)) if self.ids is None else tuple(self.ids)
        if len(ids) != n:
            raise SchemaError("ids length does not match the data")
        for k, v in (("V", V), ("y1", y1), ("z", z), ("x", x), ("y2", y2), ("r1", r1),
                     ("r2", r2), ("pz", pz), ("weight", weight), ("augmented", aug)):
            v = np.ascontiguousarray(v)
            v.flags.writeable = False
            set_(k, v)
        set_("ids", ids)
        set_("schema", schema)

    @property
    def n(self):
        return self.z.shape[0]

    def __len__(self):
        return self.n

    @property
    def complete(self):
        """Both responses observed."""
        return (self.r1 == 1) & (self.r2 == 1)

    @property
    def discordant(self):
        """``d_i r_i1 r_i2``: observed at both occasions with ``y1 + y2 = 1``."""
        return self.complete & (self.y1 + self.y2 == 1)

    @classmethod
    def from_records(cls, records, schema=("v1",)):
        records = list(records)
        k = len(schema)
        for rec in records:
            if len(rec.v) != k:
                raise SchemaError(f"record {rec.id!r}: {len(rec.v)} covariates, schema has {k}")
        col = lambda f: [f(r) for r in records]
        return cls(
            V=np.array(col(lambda r: r.v), dtype=float).reshape(len(records), k),
            y1=col(lambda r: 0 if r.y1 is None else r.y1),
            z=np.array(col(lambda r: r.z), dtype=int),
            x=col(lambda r: r.x),
            y2=col(lambda r: 0 if r.y2 is None else r.y2),
            r1=col(lambda r: r.r1),
            r2=col(lambda r: r.r2),
            pz=col(lambda r: r.pz),
            weight=col(lambda r: r.weight),
            ids=col(lambda r: r.id),
            schema=schema,
        )

    def records(self):
        for i in range(self.n):
            yield SubjectRecord(
                id=self.ids[i],
                v=tuple(self.V[i]),
                y1=int(self.y1[i]) if self.r1[i] else None,
                z=int(self.z[i]),
                x=int(self.x[i]),
                y2=int(self.y2[i]) if self.r2[i] else None,
                r1=int(self.r1[i]),
                r2=int(self.r2[i]),
                pz=float(self.pz[i]),
                weight=float(self.weight[i]),
            )

    def subset(self, mask):
        idx = np.flatnonzero(np.asarray(mask))
        return self._take(idx)

    def _take(self, idx):
        return Dataset(
            V=self.V[idx], y1=self.y1[idx], z=self.z[idx], x=self.x[idx], y2=self.y2[idx],
            r1=self.r1[idx], r2=self.r2[idx], pz=self.pz[idx], weight=self.weight[idx],
            augmented=self.augmented[idx], ids=tuple(self.ids[i] for i in idx), schema=self.schema,
        )

    def concat(self, other):
        if other.schema != self.schema:
            raise SchemaError("cannot concatenate datasets with different schemas")
        cat = lambda a, b: np.concatenate([a, b])
        return Dataset(
            V=np.vstack([self.V, other.V]), y1=cat(self.y1, other.y1), z=cat(self.z, other.z),
            x=cat(self.x, other.x), y2=cat(self.y2, other.y2), r1=cat(self.r1, other.r1),
            r2=cat(self.r2, other.r2), pz=cat(self.pz, other.pz),
            weight=cat(self.weight, other.weight), augmented=cat(self.augmented, other.augmented),
            ids=self.ids + other.ids, schema=self.schema,
        )

    def shift_covariates(self, c):
        return replace(self, V=self.V + c)


@dataclass(frozen=True)
class DiscordantCounts:
    """Weighted counts ``n[y1, z, x, y2]`` of fully observed subjects.

    Cells with ``z=0, x=1`` are structurally zero.  Augmented rows contribute
    their 0.5 weight.
    """

    n: np.ndarray

    def __call__(self, y1, z, x, y2):
        return float(self.n[y1, z, x, y2])

    def missing_cells(self):
        """Discordant ``(z, x, y1, y2)`` configurations with zero count."""
        return [
            (z, x, y1, y2)
            for z, x in OBSERVABLE_ARMS
            for y1, y2 in DISCORDANT
            if self.n[y1, z, x, y2] <= 0
        ]


def discordant_counts(data):
    n = np.zeros((2, 2, 2, 2))
    c = data.complete
    np.add.at(n, (data.y1[c], data.z[c], data.x[c], data.y2[c]), data.weight[c])
    return DiscordantCounts(n)


def closed_form_alphas(counts):
    """Treatment-arm conditional logistic estimates under the simple
    parametrization: ``log(n0101/n1100)`` and ``log(n0111/n1110)``."""
    pairs = (((0, 1, 0, 1), (1, 1, 0, 0)), ((0, 1, 1, 1), (1, 1, 1, 0)))
    out = []
    for num, den in pairs:
        a, b = counts(*num), counts(*den)
        if a <= 0 or b <= 0:
            label = "".join(map(str, num if a <= 0 else den))
            raise UndefinedRatioError(f"count n_{label} is zero; augment the data first")
        out.append(float(np.log(a / b)))
    return tuple(out)


def augment_discordant(data):
    """Rule-of-thumb completion of absent discordant cells.

    For each observable ``(z, x)`` and each discordant pair ``(y1, y2)``
    absent among fully observed subjects, append one synthetic subject with
    covariates at the sample mean and weight 0.5.

    Returns
    -------
    Dataset, list of dict
        The (possibly) extended data and one log entry per added row.
    """
    counts = discordant_counts(data.subset(~data.augmented))
    missing = counts.missing_cells()
    if not missing:
        return data, []
    real = ~data.augmented
    v_mean = data.V[real].mean(axis=0) if real.any() else np.zeros(len(data.schema))
    log, rows = [], []
    for z, x, y1, y2 in missing:
        arm = real & (data.z == z)
        pz = float(data.pz[arm].mean()) if arm.any() else 0.5
        rows.append((z, x, y1, y2, pz))
        log.append({"z": z, "x": x, "y1": y1, "y2": y2, "v": v_mean.tolist(), "pz": pz, "weight": 0.5})
    m = len(rows)
    extra = Dataset(
        V=np.tile(v_mean, (m, 1)),
        y1=[r[2] for r in rows], z=np.array([r[0] for r in rows]), x=[r[1] for r in rows],
        y2=[r[3] for r in rows], pz=[r[4] for r in rows], weight=np.full(m, 0.5),
        augmented=np.ones(m, dtype=bool),
        ids=tuple(f"augmented-z{r[0]}x{r[1]}-{r[2]}{r[3]}" for r in rows), schema=data.schema,
    )
    return data.concat(extra), log


def step1_compliance(data, param, tol=logistic.TOL, max_iter=logistic.MAX_ITER):
    """Fit ``logit pi(1|v) = m(v)'eta`` on the treatment arm with weights
    ``weight / p(z|v)``.  Augmented rows are ignored."""
    use = (data.z == 1) & ~data.augmented
    if not use.any():
        raise EstimationError("no treatment-arm records for the compliance model")
    M = param.m(data.V[use])
    prob = logistic.LogisticProblem(
        M, data.x[use], data.weight[use] / data.pz[use],
        labels=tuple(data.ids[i] for i in np.flatnonzero(use)),
    )
    res = logistic.fit(prob, tol=tol, max_iter=max_iter)
    return ComplianceModel(res.coef, param), res


def second_step_problem(data, param, compliance):
    """Weighted logistic problem whose maximiser is the step-2 estimate."""
    use = data.discordant
    if not use.any():
        raise EstimationError("no discordant subjects observed at both occasions")
    V = data.V[use]
    W = design_matrix(param, compliance.pi1(V), V, data.z[use], data.x[use])
    return logistic.LogisticProblem(
        W, data.y2[use], data.weight[use], labels=tuple(data.ids[i] for i in np.flatnonzero(use))
    )


def step2_conditional(data, param, compliance, tol=logistic.TOL, max_iter=logistic.MAX_ITER):
    """Maximise the approximate conditional log-likelihood in ``theta``."""
    res = logistic.fit(second_step_problem(data, param, compliance), tol=tol, max_iter=max_iter)
    return CausalParams.from_theta(res.coef, param.p_a), res


def comparison_fit(data, regressor):
    """Conditional logistic regression of ``Y2`` on ``(1, Z)`` or ``(1, X)``
    over discordant complete subjects.

    Returns ``(slope, se)`` with the model-based standard error.
    """
    if regressor not in ("z", "x"):
        raise ValueError("regressor must be 'z' or 'x'")
    use = data.discordant
    col = getattr(data, regressor)[use]
    if col.size == 0 or np.all(col == col[0]):
        raise EstimationError(f"need discordant subjects in both {regressor.upper()} groups")
    X = np.column_stack([np.ones(col.size), col])
    res = logistic.fit(logistic.LogisticProblem(X, data.y2[use], data.weight[use]))
    cov = np.linalg.inv(-res.hessian)
    return float(res.coef[1]), float(np.sqrt(max(cov[1, 1], 0.0)))


def itt_tr_estimates(data):
    """Intention-to-treat and treatment-received slopes ``(itt, tr)``."""
    return comparison_fit(data, "z")[0], comparison_fit(data, "x")[0]


@dataclass(frozen=True)
class EstimateOptions:
    augment: bool = True
    tol: float = logistic.TOL
    max_iter: int = logistic.MAX_ITER
    variance: bool = True


def _staged(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TSCLogitError as exc:
        if exc.stage is None:
            exc.stage = stage
        raise


def estimate(data, param, options=None):
    """Run the full two-step estimator with sandwich variance.

    Parameters
    ----------
    data : Dataset
    param : Parametrization
    options : EstimateOptions, optional

    Returns
    -------
    CausalEstimate
    """
    from .variance import sandwich_parts

    options = options or EstimateOptions()
    if tuple(param.covariates) != tuple(data.schema):
        raise SchemaError(
            f"parametrization covariates {param.covariates} do not match data schema {data.schema}"
        )
    if data.n == 0:
        raise EstimationError("empty dataset")
    log = []
    work = data
    if options.augment:
        work, log = augment_discordant(data)
    compliance, fit1 = _staged("step1", step1_compliance, work, param, options.tol, options.max_iter)
    theta, fit2 = _staged("step2", step2_conditional, work, param, compliance, options.tol, options.max_iter)
    n_step2 = int(work.discordant.sum())
    n_real_step2 = int((work.discordant & ~work.augmented).sum())
    diagnostics = {
        "n": data.n,
        "n_step1": int(((work.z == 1) & ~work.augmented).sum()),
        "n_step2": n_step2,
        "n_step2_observed": n_real_step2,
        "degenerate": n_real_step2 == 0,
        "augmentation": log,
        "step1_iterations": fit1.iterations,
        "step2_iterations": fit2.iterations,
        "step1_converged": fit1.converged,
        "step2_converged": fit2.converged,
        "v_mean": data.V[~data.augmented].mean(axis=0) if data.n else np.zeros(len(data.schema)),
        "backend": BACKEND,
    }
    k = compliance.eta.size
    if options.variance:
        parts = _staged("variance", sandwich_parts, work, param, compliance, theta)
        sigma = parts.Sigma
    else:
        sigma = np.full((k + param.p_theta,) * 2, np.nan)
    return CausalEstimate(
        eta_hat=compliance.eta, theta_hat=theta, sigma_hat=sigma, param=param, diagnostics=diagnostics
    )
