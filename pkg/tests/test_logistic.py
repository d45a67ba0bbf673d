import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsclogit import _fallback, logistic
from tsclogit.errors import NumericFailure, SchemaError, SeparationError, SingularMatrixError
from tsclogit.logistic import LogisticProblem, fit, loglik_grad_hess

try:
    from tsclogit import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def random_problem(rng, n=5, dim=3):
    X = rng.normal(size=(n, dim))
    y = (rng.random(n) < 0.5).astype(float)
    y[:2] = (0, 1)
    return LogisticProblem(X, y, rng.random(n) + 0.2)


def test_single_row_at_zero():
    ll, g, h = loglik_grad_hess(LogisticProblem([[1.0]], [1], [1]), np.zeros(1))
    assert ll == pytest.approx(np.log(0.5))
    assert g[0] == pytest.approx(0.5) and h[0, 0] == pytest.approx(-0.25)


def test_gradient_at_zero(rng):
    p = random_problem(rng, n=12)
    _, g, _ = loglik_grad_hess(p, np.zeros(p.dim))
    assert np.allclose(g, (p.w * (p.y - 0.5)) @ p.X, rtol=1e-14)


def _fd(p, coef, h=1e-5):
    g = np.zeros(p.dim)
    H = np.zeros((p.dim, p.dim))
    for j in range(p.dim):
        e = np.zeros(p.dim)
        e[j] = h
        g[j] = (loglik_grad_hess(p, coef + e)[0] - loglik_grad_hess(p, coef - e)[0]) / (2 * h)
        H[:, j] = (loglik_grad_hess(p, coef + e)[1] - loglik_grad_hess(p, coef - e)[1]) / (2 * h)
    return g, H


@pytest.mark.parametrize("seed", range(5))
def test_gradient_and_hessian_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    coef = rng.normal(size=p.dim)
    _, g, H = loglik_grad_hess(p, coef)
    g_fd, H_fd = _fd(p, coef)
    assert np.max(np.abs(g - g_fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))
    assert np.max(np.abs(H - H_fd)) <= 1e-6 * np.max(np.abs(H))


def test_intercept_only_mle():
    res = fit(LogisticProblem(np.ones((4, 1)), [1, 1, 1, 0], np.ones(4)))
    assert res.converged and res.coef[0] == pytest.approx(np.log(3), abs=1e-10)


def test_balanced_intercept_is_zero():
    res = fit(LogisticProblem(np.ones((6, 1)), [1, 0, 1, 0, 1, 0], np.ones(6)))
    assert res.coef[0] == pytest.approx(0.0, abs=1e-12)


def test_separation_detected():
    with pytest.raises(SeparationError):
        fit(LogisticProblem([[-1.0], [1.0]], [0, 1], [1, 1]))
    with pytest.raises(SeparationError):
        fit(LogisticProblem(np.ones((5, 1)), np.ones(5), np.ones(5)))


def test_singular_design():
    X = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(SingularMatrixError):
        fit(LogisticProblem(X, [0, 1, 0, 1, 1, 0], np.ones(6)))


def test_non_finite_linear_predictor_names_row():
    p = LogisticProblem([[1.0], [np.inf]], [0, 1], [1, 1], labels=("a", "b"))
    with pytest.raises(NumericFailure, match="'b'"):
        loglik_grad_hess(p, np.ones(1))


@pytest.mark.parametrize("kw", [dict(X=[[1.0]], y=[2], w=[1]), dict(X=[[1.0]], y=[1], w=[-1]),
                                dict(X=[[1.0]], y=[1], w=[0]), dict(X=[[1.0], [1.0]], y=[1], w=[1])])
def test_problem_validation(kw):
    with pytest.raises(SchemaError):
        LogisticProblem(**kw)


def test_large_predictor_is_stable():
    p = LogisticProblem([[1.0], [1.0]], [1, 0], [1, 1])
    ll, g, h = loglik_grad_hess(p, np.array([800.0]))
    assert np.isfinite(ll) and ll == pytest.approx(-800.0)
    assert np.all(np.isfinite(h))


def test_loglik_path_non_decreasing(rng):
    for _ in range(10):
        p = random_problem(rng, n=40)
        res = fit(p)
        path = np.array(res.loglik_path)
        slack = logistic.ROUNDING_SLACK * (1 + np.abs(path[:-1]))
        assert np.all(np.diff(path) >= -slack)
        assert res.grad_norm <= logistic.TOL


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_weight_rescaling_equivariance(seed, c):
    p = random_problem(np.random.default_rng(seed), n=30, dim=2)
    a = fit(p)
    b = fit(LogisticProblem(p.X, p.y, c * p.w), tol=logistic.TOL * max(c, 1))
    assert np.allclose(a.coef, b.coef, atol=1e-8)
    assert b.loglik == pytest.approx(c * a.loglik, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_duplicated_row_equals_doubled_weight(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, n=25, dim=2)
    i = int(rng.integers(p.n))
    dup = LogisticProblem(np.vstack([p.X, p.X[i]]), np.r_[p.y, p.y[i]], np.r_[p.w, p.w[i]])
    w2 = p.w.copy()
    w2[i] *= 2
    a, b = fit(dup), fit(LogisticProblem(p.X, p.y, w2))
    assert np.allclose(a.coef, b.coef, rtol=0, atol=1e-10)


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
@pytest.mark.parametrize("n,dim", [(1, 1), (7, 3), (500, 5)])
def test_backends_agree(n, dim):
    rng = np.random.default_rng(n)
    X = rng.normal(size=(n, dim)) * 3
    y = (rng.random(n) < 0.4).astype(float)
    w = rng.random(n)
    coef = rng.normal(size=dim)
    a = _fallback.loglik_grad_hess(X, y, w, coef)
    b = _kernels.loglik_grad_hess(X, y, w, coef)
    assert a[3] == b[3] == -1
    for u, v in zip(a[:3], b[:3]):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)
    assert _fallback.loglik(X, y, w, coef)[0] == pytest.approx(_kernels.loglik(X, y, w, coef)[0], rel=1e-12)
    X[n // 2, 0] = np.nan
    assert _fallback.loglik(X, y, w, coef)[1] == _kernels.loglik(X, y, w, coef)[1] == n // 2


def test_large_problem_converges_below_loglik_resolution():
    # at this size the Newton gain g'H^{-1}g falls below rounding of the loglik
    rng = np.random.default_rng(3)
    n = 400_000
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + 0.7 * X[:, 1])))).astype(float)
    res = fit(LogisticProblem(X, y, np.ones(n)))
    assert res.converged and res.grad_norm <= logistic.TOL


def test_backend_override_via_environment():
    import os
    import subprocess
    import sys
    code = "import tsclogit; print(tsclogit.BACKEND)"
    env = dict(os.environ, TSCLOGIT_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
