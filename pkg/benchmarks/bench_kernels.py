"""Compare the compiled and numpy logistic kernels.

Run with ``python3 benchmarks/bench_kernels.py``.  Reports the median wall
time of one log-likelihood/score/Hessian evaluation for several problem
sizes, and of a full two-step estimate under each backend (the estimate runs
in a subprocess because the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tsclogit import _fallback

try:
    from tsclogit import _kernels
except ImportError:
    _kernels = None

ESTIMATE_SNIPPET = """
import time
from tsclogit import BACKEND, Parametrization, Scenario, estimate, generate_dataset
data = generate_dataset(Scenario(n={n}, rho=0.0, alpha0=(1, 1), beta0=0, seed=1), 0)
param = Parametrization.simple(m=("1", "v1"))
estimate(data, param)
t = []
for _ in range({reps}):
    t0 = time.perf_counter(); estimate(data, param); t.append(time.perf_counter() - t0)
t.sort()
print(BACKEND, t[len(t) // 2])
"""


def _problem(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.normal(size=(n, dim)))
    y = (rng.random(n) < 0.5).astype(float)
    w = rng.random(n) + 0.5
    coef = rng.normal(size=dim) * 0.3
    return X, y, w, coef


def _median(fn, reps):
    return float(np.median(timeit.repeat(fn, number=1, repeat=reps)))


def kernel_table(sizes, dim, reps):
    print(f"{'n':>9} {'dim':>4} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for n in sizes:
        X, y, w, coef = _problem(n, dim)
        t_py = _median(lambda: _fallback.loglik_grad_hess(X, y, w, coef), reps)
        if _kernels is None:
            print(f"{n:>9} {dim:>4} {1e3 * t_py:>11.3f} {'n/a':>12} {'':>8}")
            continue
        t_cy = _median(lambda: _kernels.loglik_grad_hess(X, y, w, coef), reps)
        print(f"{n:>9} {dim:>4} {1e3 * t_py:>11.3f} {1e3 * t_cy:>12.3f} {t_py / t_cy:>8.2f}")


def estimate_table(n, reps):
    print(f"\nfull estimate, n={n}")
    for backend in ("python", "cython"):
        env = dict(os.environ, TSCLOGIT_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", ESTIMATE_SNIPPET.format(n=n, reps=reps)],
                             env=env, capture_output=True, text=True)
        if res.returncode != 0:
            print(f"  {backend:>7}: unavailable")
            continue
        name, t = res.stdout.split()
        print(f"  {name:>7}: {1e3 * float(t):.2f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="100,1000,10000,100000")
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--reps", type=int, default=15)
    ap.add_argument("--estimate-n", type=int, default=500)
    a = ap.parse_args()
    kernel_table([int(s) for s in a.sizes.split(",")], a.dim, a.reps)
    estimate_table(a.estimate_n, a.reps)


if __name__ == "__main__":
    main()
