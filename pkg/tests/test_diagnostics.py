import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsneflow import affinity_hi as hi
from tsneflow import diagnostics as dg
from tsneflow import flow
from tsneflow.checks import five_point_derivative, random_instance
from tsneflow.errors import BoundViolated

from conftest import equilateral

UNIFORM3 = (np.ones((3, 3)) - np.eye(3)) / 6


def s_loop(y):
    return sum((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 for a in y for b in y)


def test_pairwise_sq_sum_examples():
    assert dg.pairwise_sq_sum([[0.0, 0.0], [1.0, 0.0]]) == 2.0
    y = np.random.default_rng(0).normal(size=(9, 2))
    assert dg.pairwise_sq_sum(y) == pytest.approx(s_loop(y.tolist()), rel=1e-13)
    assert dg.pairwise_sq_sum(3.0 * y) == pytest.approx(9.0 * dg.pairwise_sq_sum(y), rel=1e-13)


def test_derivative_zero_cases():
    assert abs(dg.pairwise_sq_sum_derivative(UNIFORM3, equilateral())) <= 1e-14
    p2 = np.array([[0, 0.5], [0.5, 0]])
    assert dg.pairwise_sq_sum_derivative(p2, [[0.0, 0.0], [4.0, 1.0]]) == 0.0


@pytest.mark.parametrize("n", [3, 5, 12])
def test_derivative_matches_chain_rule(n):
    """dS/dt = grad S . (-grad C), both evaluated independently."""
    p, y = random_instance(np.random.default_rng(n), n)
    grad_s = 4.0 * n * (y - y.mean(axis=0))
    chain = float(np.sum(grad_s * -flow.kl_gradient(p, y)))
    assert dg.pairwise_sq_sum_derivative(p, y) == pytest.approx(chain, rel=1e-12)


def test_fixed_prefactor_24_only_matches_three_points():
    for n in (3, 4, 10):
        p, y = random_instance(np.random.default_rng(n), n)
        k = 1.0 / (1.0 + np.sum((y[:, None] - y[None]) ** 2, axis=-1))
        np.fill_diagonal(k, 0.0)
        fixed = 24.0 * float(np.sum((p - k / k.sum()) * k))
        exact = dg.pairwise_sq_sum_derivative(p, y)
        assert (fixed == pytest.approx(exact, rel=1e-12)) == (n == 3)


def test_derivative_along_flow_matches_finite_differences():
    p, y = random_instance(np.random.default_rng(11), 7)
    tr = flow.integrate(p, flow.EmbeddingState(y), flow.FlowOptions(h=0.01, t_end=0.5))
    arr = tr.as_arrays()
    fd = five_point_derivative(arr["t"], arr["S"])
    assert np.max(np.abs(fd - arr["dSdt_analytic"]) / np.abs(arr["dSdt_analytic"])) <= 1e-4


def test_five_point_derivative_exact_on_quartics():
    t = np.linspace(0.0, 2.0, 21)
    f = 3 * t ** 4 - t ** 3 + 2 * t
    assert np.allclose(five_point_derivative(t, f), 12 * t ** 3 - 3 * t ** 2 + 2, rtol=1e-10)


def test_upper_bound_p_equals_q():
    assert abs(dg.derivative_upper_bound(UNIFORM3, equilateral())) <= 1e-14


def test_upper_bound_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(3, 33))
        p, y = random_instance(rng, n)
        y *= rng.uniform(0.01, 10)
        b = dg.derivative_upper_bound(p, y)
        assert dg.pairwise_sq_sum_derivative(p, y) <= b + 1e-12 * max(1.0, abs(b))


def test_negative_bound_forces_shrinking():
    n = 6
    p = (np.ones((n, n)) - np.eye(n)) / (n * (n - 1))  # smallest possible sum p^2
    y = np.random.default_rng(3).normal(size=(n, 2))
    from tsneflow.affinity_lo import q_matrix
    q = q_matrix(y)
    assert np.sum(p ** 2) < np.sum(q ** 2)
    assert dg.derivative_upper_bound(p, y) < 0
    assert dg.pairwise_sq_sum_derivative(p, y) < 0


def test_upper_bound_violation_raises(monkeypatch):
    p, y = random_instance(np.random.default_rng(4), 5)
    monkeypatch.setattr(dg, "student_kernel", lambda y: -np.ones((5, 5)) + np.eye(5))
    with pytest.raises(BoundViolated):
        dg.derivative_upper_bound(p, y)


def test_ratio_constant_D():
    n = 5
    p = (np.ones((n, n)) - np.eye(n)) / (n * (n - 1))
    ent = float(np.sum(p[p > 0] * np.log(p[p > 0])))
    assert dg.ratio_constant_D(p, ent) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert dg.ratio_constant_D(p, ent + p[0, 1]) == pytest.approx(math.sqrt(2) * math.exp(0.5), rel=1e-12)
    assert dg.ratio_constant_D(p, 1e6) == math.inf


def test_boundedness_radius():
    p = UNIFORM3
    ent = float(6 * (1 / 6) * math.log(1 / 6))
    assert dg.boundedness_radius(p, ent, 7.0, 3) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert dg.boundedness_radius(p, ent + 1 / 6, 1.0, 3) == pytest.approx(
        math.sqrt(2) * math.exp(0.5), rel=1e-12)
    assert dg.boundedness_radius(p, ent + 1.0, 1e300, 3) == math.inf
    with pytest.raises(ValueError):
        dg.boundedness_radius(p, ent, 0.5, 3)


def test_theorem_condition():
    assert dg.theorem_condition(300, 1.0)
    assert not dg.theorem_condition(200, 1.0)
    assert not dg.theorem_condition(3, 1.0)
    assert 299 / math.log(300) ** 2 == pytest.approx(9.19, abs=0.01)
    assert 199 / math.log(200) ** 2 == pytest.approx(7.09, abs=0.01)


def test_detect_tau_and_radius_check():
    assert dg.detect_tau([-3.0, -1.0, 0.0, 2.0]) == 2
    assert dg.detect_tau([-1.0, -2.0]) is None

    class T:
        dSdt = [-1.0, 0.5, 0.2]
        max_norm = [5.0, 4.0, 3.0]

    assert dg.radius_check(T, math.log(4.5)) == {"tau_index": 1, "checked": 2, "holds": True, "finite": True}
    assert not dg.radius_check(T, math.log(3.5))["holds"]


def test_distance_ratio():
    assert dg.distance_ratio([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]) == pytest.approx(3.0)


def test_theory_report_json(circle100):
    cond = hi.calibrate(circle100, 10.0)
    p = hi.symmetrize(cond)
    tr = flow.integrate(p, flow.initial_embedding(100, 0), flow.FlowOptions(t_end=1.0))
    rep = dg.theory_report(p, tr, hi.cp_bound_report(cond, circle100).log_cp, meta={"k": 1})
    import json
    d = json.loads(rep.to_json())
    assert d["theorem_condition"] is False
    assert d["C_p"] == pytest.approx(math.exp(d["log_C_p"]), rel=1e-12)
    assert d["D"] is None and d["log_D"] > 709  # overflowed, kept in log form
    assert d["radius_holds"] is True and d["meta"] == {"k": 1}
    assert d["qprime_margin"] > 0


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_derivative_scales_consistently(seed, lam):
    """Bound and derivative agree in sign whenever the bound is negative."""
    p, y = random_instance(np.random.default_rng(seed), 6)
    y = lam * y
    b = dg.derivative_upper_bound(p, y)
    if b < 0:
        assert dg.pairwise_sq_sum_derivative(p, y) < 0
