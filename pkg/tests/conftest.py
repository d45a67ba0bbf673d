import numpy as np
import pytest

from tsclogit.estimator import Dataset
from tsclogit.simulation import Scenario, generate_dataset


def counts_dataset(cells, pz=0.5, v=0.0, concordant=None):
    """Dataset from ``{(y1, z, x, y2): count}``.

    Integer counts give that many unit-weight rows; a float gives a single
    row with that weight.  ``concordant`` maps ``(z, x)`` to a number of
    extra ``y1 = y2 = 0`` rows.
    """
    rows = []
    for (y1, z, x, y2), k in cells.items():
        if isinstance(k, float):
            rows.append((y1, z, x, y2, k))
        else:
            rows.extend([(y1, z, x, y2, 1.0)] * k)
    for (z, x), k in (concordant or {}).items():
        rows.extend([(0, z, x, 0, 1.0)] * k)
    r = np.array(rows, dtype=float)
    n = len(rows)
    return Dataset(
        V=np.full((n, 1), v), y1=r[:, 0].astype(int), z=r[:, 1].astype(int), x=r[:, 2].astype(int),
        y2=r[:, 3].astype(int), pz=pz, weight=r[:, 4],
    )


def sim(n, rho=0.0, alpha0=(1.0, 1.0), beta0=0.0, missing=False, seed=1, index=0):
    sc = Scenario(n=n, rho=rho, alpha0=alpha0, beta0=beta0, missing=missing, seed=seed, replications=1)
    return generate_dataset(sc, index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
