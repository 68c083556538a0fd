import json

import numpy as np
import pytest
import scipy.linalg as sla

from rrhinf.errors import DimensionMismatch, SchemaError
from rrhinf.model import (chua_config, detectability_report, load_problem, numerical_rank,
                          problem_to_config)


def _unobservable_eigenvalues(A, C):
    # Kalman decomposition: A restricted to the null space of the observability matrix
    n = A.shape[0]
    O = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    Nu = sla.null_space(O, rcond=1e-9)
    if Nu.shape[1] == 0:
        return np.array([])
    return np.linalg.eigvals(Nu.T @ A @ Nu)


def test_chua_detectability_against_kalman_decomposition():
    p = load_problem(chua_config())
    rep = detectability_report(p.plant, p.sensors)
    for entry, s in zip(rep, p.sensors):
        eig = _unobservable_eigenvalues(p.plant.A, s.C)
        assert entry["observable"] == (eig.size == 0)
        assert entry["detectable"] == bool(np.all(eig.real < 0))
        np.testing.assert_allclose(np.sort_complex(np.array(entry["unobservable_eigenvalues"])),
                                   np.sort_complex(eig), atol=1e-6)


def test_chua_rank_margins():
    # at the default tolerance every pair passes; sensor 1 is within 1e-6 of
    # losing the unstable pair, sensor 2 only loses the stable real mode
    p = load_problem(chua_config())
    rep = detectability_report(p.plant, p.sensors)
    assert [r["observable"] for r in rep] == [True, True, True]
    loose = detectability_report(p.plant, p.sensors, rtol=1e-5)
    assert not loose[0]["detectable"]
    assert sorted(np.real(loose[0]["unobservable_eigenvalues"])) == pytest.approx([0.22983, 0.22983], abs=1e-4)
    assert loose[1]["detectable"] and not loose[1]["observable"]
    assert np.real(loose[1]["unobservable_eigenvalues"]) == pytest.approx([-4.65967], abs=1e-4)
    assert loose[2]["observable"]


def test_detectable_but_not_observable():
    cfg = chua_config()
    cfg["plant"]["A"] = [[-1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -3.0]]
    cfg["sensors"][0]["C"] = [[0.0, 1.0, 0.0]]
    p = load_problem(cfg)
    r = detectability_report(p.plant, p.sensors)[0]
    assert not r["observable"] and r["detectable"]
    assert sorted(np.real(r["unobservable_eigenvalues"])) == pytest.approx([-3.0, -1.0])


def test_defaults_and_roundtrip(tmp_path):
    cfg = chua_config(period=0.05)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    p = load_problem(path)
    np.testing.assert_array_equal(p.sensors[0].H, np.eye(3))
    # pi_i = 2 alpha_i / (1 + q_i) with q = (1, 1, 1)
    assert p.options.pi == pytest.approx((0.1, 0.1, 0.1))
    assert p.schedule.tau(2) == pytest.approx(0.1)
    again = load_problem(problem_to_config(p))
    assert again.options == p.options
    np.testing.assert_array_equal(again.plant.A, p.plant.A)


def test_with_period_and_options():
    p = load_problem(chua_config())
    q = p.with_period(0.2).with_options(eps=0.3)
    assert q.schedule.tau(2) == pytest.approx(0.4)
    assert q.options.eps == (0.3, 0.3, 0.3)
    assert p.options.eps == (0.1, 0.1, 0.1)


@pytest.mark.parametrize("mutate, err", [
    (lambda c: c.pop("plant"), SchemaError),
    (lambda c: c["sensors"].pop(), DimensionMismatch),
    (lambda c: c["sensors"][0].update(C=[[1.0, 2.0]]), DimensionMismatch),
    (lambda c: c["synthesis"].update(pi=[0.5, 0.5, 0.5]), SchemaError),
    (lambda c: c["synthesis"].update(eps=0.0), SchemaError),
])
def test_config_errors(mutate, err):
    cfg = chua_config()
    mutate(cfg)
    with pytest.raises(err):
        load_problem(cfg)


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(SchemaError):
        load_problem(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaError):
        load_problem(bad)


def test_numerical_rank():
    assert numerical_rank(np.diag([1.0, 1e-3, 1e-12])) == 2
    assert numerical_rank(np.zeros((2, 2))) == 0
