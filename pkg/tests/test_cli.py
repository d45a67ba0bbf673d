import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import sim
from tsclogit.cli import main, parse_grid
from tsclogit.dataio import load_parametrization, read_subjects, split_terms, write_subjects
from tsclogit.errors import SchemaError


@pytest.fixture
def subjects(tmp_path):
    path = tmp_path / "subjects.csv"
    with open(path, "w", newline="") as fh:
        write_subjects(sim(400, rho=0.3, alpha0=(0.5, 1.5), beta0=0.5, missing=True, seed=2), fh)
    return path


def _write(path, text):
    path.write_text(text)
    return path


def test_estimate_report(subjects, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["estimate", "--input", str(subjects), "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    names = [r["parameter"] for r in rep["coefficients"]]
    assert names == ["eta1", "eta2", "alpha1", "alpha2", "beta"]
    for r in rep["coefficients"] + [rep["delta"]]:
        assert all(math.isfinite(r[k]) for k in ("estimate", "se", "t", "p"))
        assert r["t"] == pytest.approx(r["estimate"] / r["se"])
        assert 0 <= r["p"] <= 1
    S = np.array(rep["covariance"]["matrix"])
    assert S.shape == (5, 5) and np.allclose(S, S.T)
    assert rep["covariance"]["labels"] == names
    assert rep["delta"]["estimate"] == pytest.approx(
        rep["coefficients"][3]["estimate"] - rep["coefficients"][2]["estimate"] - rep["coefficients"][4]["estimate"])


def test_estimate_byte_identical(subjects, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["estimate", "--input", str(subjects), "--output", str(a)])
    main(["estimate", "--input", str(subjects), "--output", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_estimate_with_config_and_no_augment(subjects, tmp_path):
    cfg = _write(tmp_path / "p.ini", "[parametrization]\nm = 1\n")
    out = tmp_path / "r.json"
    assert main(["estimate", "--input", str(subjects), "--config", str(cfg), "--no-augment",
                 "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["parametrization"]["m"] == ["1"]
    assert rep["diagnostics"]["augmentation"] == []


def test_missing_x_column(subjects, tmp_path, capsys):
    rows = list(csv.reader(open(subjects)))
    j = rows[0].index("x")
    bad = tmp_path / "nox.csv"
    with open(bad, "w", newline="") as fh:
        csv.writer(fh).writerows([r[:j] + r[j + 1:] for r in rows])
    assert main(["estimate", "--input", str(bad)]) == 2
    assert "'x'" in capsys.readouterr().err


@pytest.mark.parametrize("text,msg", [
    ("id,v1,y1,z,x,y2,pz,age\n1,0,1,1,1,0,0.5,3\n", "unknown column"),
    ("id,v1,y1,z,x,y2,pz\n1,0,1,1,1,0,0.5\n2,0,2,1,1,0,0.5\n", "line 3"),
    ("id,v1,y1,z,x,y2,pz\n1,0,1,1,1\n", "line 2"),
    ("id,v1,y1,z,x,y2,pz\n1,0,1,0,1,0,0.5\n", "z=0 implies x=0"),
    ("id,v1,y1,z,x,y2,r1,pz\n1,0,,1,1,0,1,0.5\n", "r1=1"),
    ("id,v1,y1,z,x,y2\n1,0,1,1,1,0\n", "pz"),
    ("id,v1,y1,z,x,y2,pz\n1,abc,1,1,1,0,0.5\n", "not a number"),
    ("id,v2,y1,z,x,y2,pz\n1,0,1,1,1,0,0.5\n", "v1..vk"),
])
def test_schema_errors(tmp_path, capsys, text, msg):
    path = _write(tmp_path / "s.csv", text)
    assert main(["estimate", "--input", str(path)]) == 2
    assert msg in capsys.readouterr().err


def test_missing_file_is_schema_exit(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "none.csv")]) == 2


def test_numerical_failure_exit(tmp_path, capsys):
    # every treated subject complies: the compliance model separates
    rows = ["id,v1,y1,z,x,y2"] + [f"{i},{i / 10},{i % 2},1,1,{1 - i % 2}" for i in range(10)] + \
           [f"c{i},{i / 10},{i % 2},0,0,{1 - i % 2}" for i in range(10)]
    path = _write(tmp_path / "s.csv", "\n".join(rows) + "\n")
    assert main(["estimate", "--input", str(path), "--pz-constant", "0.5"]) == 3
    assert "step1" in capsys.readouterr().err


def test_pz_constant_and_inferred_indicators(tmp_path):
    text = "id,v1,y1,z,x,y2\n1,0.5,,1,1,0\n2,0.1,1,0,0,\n"
    d = read_subjects(_write(tmp_path / "s.csv", text), pz_constant=0.3)
    assert d.r1.tolist() == [0, 1] and d.r2.tolist() == [1, 0]
    assert d.pz.tolist() == [0.3, 0.7]


def test_subject_csv_round_trip(tmp_path):
    d = sim(100, missing=True, seed=4)
    path = tmp_path / "s.csv"
    with open(path, "w", newline="") as fh:
        write_subjects(d, fh)
    e = read_subjects(path)
    for k in ("V", "y1", "z", "x", "y2", "r1", "r2", "pz"):
        assert np.array_equal(getattr(d, k), getattr(e, k))


def test_limits_consistency_at_zero(tmp_path, capsys):
    assert main(["limits", "--beta0", "0", "--delta0", "1", "--rho", "0,0.75"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    cov = [r for r in rows if r["estimator"] == "cov"]
    assert len(cov) == 2 and all(abs(float(r["delta_star"]) - 1) <= 1e-3 for r in cov)


def test_limits_config_file(tmp_path):
    cfg = _write(tmp_path / "l.ini", "[limits]\nrho = 0\ndelta0 = 0\nbeta0 = -1:1:1\nmissing = true\n"
                                     "estimators = cov\ngh_nodes = 48\n")
    out = tmp_path / "c.csv"
    assert main(["limits", "--config", str(cfg), "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["beta0"] for r in rows] == ["-1.0", "0.0", "1.0"]
    assert {r["scenario"] for r in rows} == {"missing"}


def test_limits_bad_options():
    assert main(["limits", "--beta0", "1:0:0.5"]) == 2
    assert main(["limits", "--gh-nodes", "3"]) == 2
    assert main(["limits", "--estimators", "foo"]) == 2


def test_simulate_deterministic_across_threads(tmp_path):
    cfg = _write(tmp_path / "s.ini", "[scenario t]\nn = 150\nrho = 0\nalpha0 = 1, 1\nbeta0 = 0\n"
                                     "replications = 6\nvariants = cov, itt\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", str(cfg), "--seed", "7", "--output", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--seed", "7", "--threads", "2", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "seed=7" in a.read_text()


def test_parse_grid():
    assert parse_grid("-1:1:0.5") == (-1.0, -0.5, 0.0, 0.5, 1.0)
    assert parse_grid("0, 0.75") == (0.0, 0.75)
    with pytest.raises(SchemaError):
        parse_grid("a")


def test_split_terms_and_parametrization():
    assert split_terms("1, v1, expit(v1*2)") == ("1", "v1", "expit(v1*2)")
    p = load_parametrization(None, ("v1", "v2"))
    assert [t.source for t in p.m_terms] == ["1", "v1", "v2"] and p.is_simple
    with pytest.raises(SchemaError):
        split_terms("1,,v1")


def test_console_entry_point(subjects):
    res = subprocess.run([sys.executable, "-m", "tsclogit.cli", "estimate", "--input", str(subjects)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["delta"]["parameter"] == "delta"
