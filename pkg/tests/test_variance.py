import warnings

import numpy as np
import pytest
from scipy.special import expit

from conftest import counts_dataset, sim
from tsclogit.errors import NumericalWarning, SingularMatrixError
from tsclogit.estimator import augment_discordant, estimate
from tsclogit.model import CausalParams, ComplianceModel, Parametrization, design_row
from tsclogit.variance import (
    SandwichParts, build_H, build_K, delta_se, per_record_scores, sandwich_cov, sandwich_parts,
    stacked_score,
)

COV = Parametrization.simple(m=("1", "v1"))
SIMPLE = Parametrization.simple()


def _point(seed, n=80, missing=True):
    d = sim(n, rho=0.5, beta0=0.7, missing=missing, seed=seed)
    d, _ = augment_discordant(d)
    rng = np.random.default_rng(seed)
    eta = rng.normal(size=2) * 0.5
    theta = rng.normal(size=3) * 0.5
    return d, eta, theta


def _naive_scores(d, param, eta, theta):
    comp = ComplianceModel(eta, param)
    U = []
    for i in range(d.n):
        v = d.V[i]
        m = param.m(v)
        pi = 1.0 / (1.0 + np.exp(-(m @ eta)))
        s1 = np.zeros_like(m)
        if d.z[i] == 1 and not d.augmented[i]:
            s1 = (1.0 / d.pz[i]) * (d.x[i] - pi) * m
        w = design_row(param, comp, v, int(d.z[i]), int(d.x[i]))
        di = float(d.r1[i] and d.r2[i] and d.y1[i] + d.y2[i] == 1)
        s2 = di * (d.y2[i] - 1.0 / (1.0 + np.exp(-(w @ theta)))) * w
        U.append(np.r_[s1, s2])
    return np.array(U)


def _naive_H(d, param, eta, theta):
    comp = ComplianceModel(eta, param)
    k, p = param.p_m, param.p_theta
    H = np.zeros((k + p, k + p))
    for i in range(d.n):
        om, v = d.weight[i], d.V[i]
        m = param.m(v)
        pi = 1.0 / (1.0 + np.exp(-(m @ eta)))
        if d.z[i] == 1 and not d.augmented[i]:
            H[:k, :k] -= om / d.pz[i] * pi * (1 - pi) * np.outer(m, m)
        if not (d.r1[i] and d.r2[i] and d.y1[i] + d.y2[i] == 1):
            continue
        w = design_row(param, comp, v, int(d.z[i]), int(d.x[i]))
        mu = 1.0 / (1.0 + np.exp(-(w @ theta)))
        H[k:, k:] -= om * mu * (1 - mu) * np.outer(w, w)
        dw = np.zeros((p, k))
        dw[param.p_a:, :] = (1 - d.z[i]) * pi * (1 - pi) * np.outer(param.b(v), m)
        H[k:, :k] += om * ((d.y2[i] - mu) * dw - mu * (1 - mu) * np.outer(w, theta @ dw))
    return H


@pytest.mark.parametrize("seed", range(4))
def test_H_matches_finite_differences_of_stacked_score(seed):
    d, eta, theta = _point(seed)
    H = build_H(d, COV, eta, theta)
    x0 = np.r_[eta, theta]
    k = eta.size
    s = lambda x: stacked_score(d, COV, x[:k], x[k:])
    J = np.zeros_like(H)
    h = 1e-6
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = h
        J[:, j] = (s(x0 + e) - s(x0 - e)) / (2 * h)
    assert np.max(np.abs(H - J)) <= 1e-5 * np.max(np.abs(H))
    assert np.all(H[:k, k:] == 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_blocks_match_naive_oracle(seed):
    d, eta, theta = _point(seed)
    U = _naive_scores(d, COV, eta, theta)
    K = sum(d.weight[i] * np.outer(U[i], U[i]) for i in range(d.n))
    assert np.allclose(per_record_scores(d, COV, eta, theta), U, rtol=0, atol=1e-12)
    assert np.allclose(build_K(d, COV, eta, theta), K, rtol=0, atol=1e-12 * max(1, np.abs(K).max()))
    Hn = _naive_H(d, COV, eta, theta)
    assert np.allclose(build_H(d, COV, eta, theta), Hn, rtol=0, atol=1e-12 * max(1, np.abs(Hn).max()))


def test_treatment_only_cross_block_zero():
    d = sim(200, seed=3)
    d = d.subset(d.z == 1)
    H = build_H(d, COV, np.array([0.1, 0.2]), np.array([0.3, 0.4, 0.5]))
    assert np.all(H[2:, :2] == 0.0)


def test_control_only_K_eta_blocks_zero():
    d = sim(200, seed=3)
    d = d.subset(d.z == 0)
    K = build_K(d, COV, np.array([0.1, 0.2]), np.array([0.3, 0.4, 0.5]))
    assert np.all(K[:2, :] == 0.0) and np.all(K[:, :2] == 0.0)


def test_single_subject_K_is_outer_product():
    d = sim(50, seed=1)
    i = int(np.flatnonzero(d.discordant & (d.z == 1))[0])
    one = d.subset(np.arange(d.n) == i)
    eta, th = np.array([0.2, -0.1]), np.array([0.5, 0.1, 0.3])
    u = per_record_scores(one, COV, eta, th)[0]
    assert np.array_equal(build_K(one, COV, eta, th), np.outer(u, u))


def test_sandwich_trivial_cases():
    K = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(sandwich_cov(np.eye(2), K), K)
    assert np.allclose(sandwich_cov(2 * np.eye(3), np.eye(3)), 0.25 * np.eye(3))


def test_sandwich_matches_explicit_inverse(rng):
    A = rng.normal(size=(5, 5))
    H = -(A @ A.T + 5 * np.eye(5))
    H[:2, 2:] = 0.0
    B = rng.normal(size=(5, 5))
    K = B @ B.T
    Hi = np.linalg.inv(H)
    S = sandwich_cov(H, K, p_eta=2)
    assert np.allclose(S, Hi @ K @ Hi.T, atol=1e-10, rtol=0)
    assert np.allclose(S, S.T, atol=1e-14)
    assert np.allclose(SandwichParts(H, K, 2).Sigma, S)


def test_sandwich_singular_names_block():
    H = np.eye(4)
    H[3, 3] = 0.0
    with pytest.raises(SingularMatrixError, match="theta-theta"):
        sandwich_cov(H, np.eye(4), p_eta=2)
    H = np.eye(4)
    H[0, 0] = 0.0
    with pytest.raises(SingularMatrixError, match="eta-eta"):
        sandwich_cov(H, np.eye(4), p_eta=2)


def test_delta_se_examples():
    assert delta_se(np.eye(3), SIMPLE, [0.0]) == pytest.approx(np.sqrt(3))
    assert delta_se(np.zeros((3, 3)), SIMPLE, [0.0]) == 0.0


def test_delta_se_negative_clamped():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert delta_se(-np.eye(3), SIMPLE, [0.0]) == 0.0
    assert any(issubclass(x.category, NumericalWarning) for x in w)


def test_duplication_halves_sigma():
    d = sim(300, seed=14)
    a = estimate(d, COV)
    b = estimate(d.concat(d), COV)
    assert np.allclose(b.theta_hat.theta, a.theta_hat.theta, atol=1e-9)
    assert np.allclose(b.sigma_hat, a.sigma_hat / 2, rtol=1e-6, atol=1e-12)


def test_theta_block_negative_semidefinite_and_full_rank():
    d = sim(400, seed=15)
    est = estimate(d, COV, )
    parts = sandwich_parts(d, COV, ComplianceModel(est.eta_hat, COV), est.theta_hat)
    H22 = parts.H[2:, 2:]
    assert np.allclose(H22, H22.T)
    ev = np.linalg.eigvalsh(H22)
    assert ev.max() <= 1e-8 and ev.min() < 0
    assert np.linalg.matrix_rank(parts.H) == parts.H.shape[0]


def test_weights_act_as_frequencies():
    d = counts_dataset({(0, 0, 0, 1): 3, (1, 0, 0, 0): 2, (0, 1, 0, 1): 4, (1, 1, 0, 0): 2,
                        (0, 1, 1, 1): 5, (1, 1, 1, 0): 3})
    eta, th = np.array([0.2]), np.array([0.3, -0.2, 0.5])
    from tsclogit.estimator import Dataset
    w2 = Dataset(V=d.V, y1=d.y1, z=d.z, x=d.x, y2=d.y2, pz=d.pz, weight=2 * d.weight)
    assert np.allclose(build_K(w2, SIMPLE, eta, th), 2 * build_K(d, SIMPLE, eta, th))
    assert np.allclose(build_H(w2, SIMPLE, eta, th), 2 * build_H(d, SIMPLE, eta, th))
