import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsneflow import affinity_hi as hi
from tsneflow import flow
from tsneflow.affinity_lo import EmbeddingState
from tsneflow.checks import fd_gradient, kl_extended, random_instance
from tsneflow.errors import StepFailure

from conftest import equilateral

UNIFORM3 = (np.ones((3, 3)) - np.eye(3)) / 6


def kl_loop(p, y):
    n = len(y)
    k = {(i, j): 1.0 / (1.0 + (y[i][0] - y[j][0]) ** 2 + (y[i][1] - y[j][1]) ** 2)
         for i in range(n) for j in range(n) if i != j}
    z = sum(k.values())
    return sum(p[i][j] * math.log(p[i][j] / (k[i, j] / z)) for (i, j) in k if p[i][j] > 0)


def test_kl_zero_when_p_equals_q():
    assert abs(flow.kl_divergence(UNIFORM3, equilateral())) <= 1e-15


def test_kl_two_points_is_zero():
    p = np.array([[0, 0.5], [0.5, 0]])
    for y in ([[0, 0], [1, 0]], [[3, -2], [100, 7]]):
        assert flow.kl_divergence(p, y) == 0.0
        assert np.all(flow.kl_gradient(p, y) == 0.0)


def test_kl_matches_loop_oracle():
    p, y = random_instance(np.random.default_rng(0), 10)
    assert abs(flow.kl_divergence(p, y) - kl_loop(p.tolist(), y.tolist())) <= 1e-12


def test_kl_accepts_sym_affinity_and_state():
    p, y = random_instance(np.random.default_rng(1), 6)
    assert flow.kl_divergence(hi.SymAffinity(p), EmbeddingState(y)) == flow.kl_divergence(p, y)


def test_gradient_zero_at_p_equals_q():
    assert np.max(np.abs(flow.kl_gradient(UNIFORM3, equilateral()))) <= 1e-15


def test_gradient_finite_difference_n8():
    rng = np.random.default_rng(8)
    p, y = random_instance(rng, 8)
    g = flow.kl_gradient(p, y)
    # plain float64 central differences with h = 1e-6
    fd = fd_gradient(p, y, h=1e-6)
    assert np.max(np.abs(g - fd) / np.abs(fd)) <= 1e-6


def test_extended_kl_agrees_with_float64():
    p, y = random_instance(np.random.default_rng(2), 9)
    assert abs(float(kl_extended(p, y)) - flow.kl_divergence(p, y)) <= 1e-13


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_gradient_rows_sum_to_zero(seed, n):
    p, y = random_instance(np.random.default_rng(seed), n)
    g = flow.kl_gradient(p, y)
    assert np.all(np.abs(g.sum(axis=0)) <= 1e-13 * max(1.0, np.abs(g).max()))


def test_flow_step_fixed_point():
    s = EmbeddingState(equilateral())
    out = flow.flow_step(UNIFORM3, s, 0.5)
    assert np.allclose(out.y, s.y, atol=1e-15) and out.t == 0.5


@given(st.integers(0, 2**32 - 1), st.sampled_from(["rk4", "euler"]))
def test_flow_step_preserves_center_of_mass(seed, method):
    p, y = random_instance(np.random.default_rng(seed), 10)
    y = y - y.mean(axis=0)
    out = flow.flow_step(p, EmbeddingState(y), 0.05, method)
    assert np.max(np.abs(out.center_of_mass())) <= 1e-13


@given(st.integers(0, 2**32 - 1))
def test_flow_step_never_raises_kl(seed):
    p, y = random_instance(np.random.default_rng(seed), 8)
    s = EmbeddingState(y)
    out = flow.flow_step(p, s, 5.0)
    assert flow.kl_divergence(p, out) <= flow.kl_divergence(p, s) + flow.KL_SLACK
    assert 0 < out.t <= 5.0


def test_flow_step_failure_with_ascending_gradient():
    p, y = random_instance(np.random.default_rng(4), 6)
    with pytest.raises(StepFailure) as e:
        flow.flow_step(p, EmbeddingState(y), 0.1, gradient=lambda p, y: -flow.kl_gradient(p, y))
    assert e.value.to_dict()["module"] == "kl-flow"


def test_integrate_constant_at_fixed_point():
    tr = flow.integrate(UNIFORM3, EmbeddingState(equilateral()), flow.FlowOptions(h=0.5, t_end=5))
    assert len(tr.t) == 11
    assert np.ptp(tr.kl) <= 1e-15
    assert np.ptp(tr.S) <= 1e-13


def test_integrate_circle_end_to_end(circle100):
    from tsneflow import diagnostics as dg
    cond = hi.calibrate(circle100, 10.0)
    p = hi.symmetrize(cond)
    tr = flow.integrate(p, flow.initial_embedding(100, 0), flow.FlowOptions(t_end=50))
    assert len(tr.t) == 501 and tr.t[-1] == pytest.approx(50.0)
    assert np.all(np.diff(tr.kl) < 0)
    log_r = dg.log_boundedness_radius(p, tr.kl[0], hi.cp_bound_report(cond, circle100).log_cp, 100)
    assert math.log(tr.max_norm[-1]) <= log_r


def test_integrate_record_every_keeps_final(circle100):
    p = hi.symmetrize(hi.calibrate(circle100, 10.0))
    tr = flow.integrate(p, flow.initial_embedding(100, 1), flow.FlowOptions(t_end=1.05, record_every=4),
                        keep_states=True)
    assert tr.t[-1] == pytest.approx(1.05) and len(tr.step_kl) == 12
    assert tr.t[:4] == pytest.approx([0.0, 0.4, 0.8, 1.05])
    assert len(tr.states) == len(tr.t)


def test_trace_csv(tmp_path, circle100):
    p = hi.symmetrize(hi.calibrate(circle100, 10.0))
    tr = flow.integrate(p, flow.initial_embedding(100, 0), flow.FlowOptions(t_end=0.3))
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(flow.TRACE_COLUMNS) and len(lines) == 5
    back = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1], tr.kl)


def test_discrete_step_examples():
    s = EmbeddingState(equilateral())
    assert np.allclose(flow.discrete_step(UNIFORM3, s, None, 10.0, 0.0).y, s.y, atol=1e-14)
    p, y = random_instance(np.random.default_rng(5), 7)
    st_ = EmbeddingState(y)
    a = flow.discrete_step(p, st_, None, 1e-3, 0.0)
    b = flow.flow_step(p, st_, 1e-3, "euler")
    assert np.array_equal(a.y, b.y)
    prev = EmbeddingState(s.y - 0.1)
    moved = flow.discrete_step(UNIFORM3, s, prev, 1.0, 0.5)
    assert np.allclose(moved.y - s.y, 0.5 * (s.y - prev.y), atol=1e-14)


def test_descend_runs():
    p, y = random_instance(np.random.default_rng(6), 12)
    kls = flow.descend(p, EmbeddingState(y), flow.FlowOptions(eta=1.0, alpha=0.5), 20)
    assert len(kls) == 20 and kls[-1] < flow.kl_divergence(p, y)


def test_flow_options_validation():
    for bad in (dict(h=0), dict(method="midpoint"), dict(alpha=1.0), dict(record_every=0),
                dict(t_end=-1), dict(eta=0)):
        with pytest.raises(ValueError):
            flow.FlowOptions(**bad)


def test_initial_embedding_deterministic_and_centered():
    a, b = flow.initial_embedding(50, 3), flow.initial_embedding(50, 3)
    assert np.array_equal(a.y, b.y)
    assert np.max(np.abs(a.center_of_mass())) <= 1e-17
    assert np.std(a.y) == pytest.approx(flow.INIT_SCALE, rel=0.2)


def test_integrate_many_matches_sequential(circle100):
    p = hi.symmetrize(hi.calibrate(circle100, 10.0))
    inits = [flow.initial_embedding(100, s) for s in range(3)]
    opts = flow.FlowOptions(t_end=0.5)
    par = flow.integrate_many(p, inits, opts, max_workers=3)
    seq = [flow.integrate(p, s, opts) for s in inits]
    for a, b in zip(par, seq):
        assert np.array_equal(a.final_state.y, b.final_state.y)
