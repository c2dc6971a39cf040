import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_instance
from infogeom.exceptions import InvalidArgumentError, InvalidStateError
from infogeom.iga import (
    IGA_TRACE_COLUMNS,
    GaussianBelief,
    IgaState,
    NaturalParameter,
    belief_of,
    e_condition_residual,
    iga_run,
    iga_step,
    m_condition_residual,
    m_project,
    iga_consistency_error,
    write_iga_trace,
)
from infogeom.model import PriorModel
from infogeom.operators import DenseOperator
from infogeom.oracle import condition_gaussian, mmse
from infogeom.rng import complex_normal, make_rng


def test_belief_of_zero():
    b = belief_of(NaturalParameter.zeros(3), PriorModel(np.ones(3), 1.0))
    np.testing.assert_array_equal(b.mean, 0)
    np.testing.assert_array_equal(b.var, 1)


def test_belief_of_hand_value():
    b = belief_of(NaturalParameter(np.array([2.0 + 0j]), np.array([-1.0])), PriorModel(np.ones(1), 1.0))
    assert b.var[0] == pytest.approx(0.5)
    assert b.mean[0] == pytest.approx(0.5)


def test_belief_of_rejects_nonpositive_precision():
    with pytest.raises(InvalidStateError):
        belief_of(NaturalParameter(np.zeros(1, complex), np.array([1.0])), PriorModel(np.ones(1), 1.0))


def test_gaussian_belief_rejects_bad_var():
    with pytest.raises(InvalidArgumentError):
        GaussianBelief(np.zeros(1, complex), np.array([0.0]))


def test_m_project_zero_input():
    prior = PriorModel(np.ones(3), 0.5)
    out = m_project(NaturalParameter.zeros(3), np.exp(1j * np.arange(3)), 0.0, prior)
    np.testing.assert_array_equal(out.theta, 0)


def test_m_project_scalar_hand_value():
    prior = PriorModel(np.ones(1), 1.0)
    out = m_project(NaturalParameter.zeros(1), np.ones(1), 1.0, prior)
    assert out.theta[0] == pytest.approx(2.0)
    assert out.nu[0] == pytest.approx(-1.0)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 6), seed=st.integers(0, 10_000), unit=st.booleans())
def test_m_project_moment_matching(m, seed, unit):
    rng = make_rng(seed, 0)
    prior = PriorModel(np.exp(rng.uniform(-1, 1, m)), float(np.exp(rng.uniform(-2, 1))))
    gamma = np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    if not unit:
        gamma = gamma * rng.uniform(0.2, 2.0, m)
    np_n = NaturalParameter(complex_normal(rng, m), -rng.uniform(0, 3, m))
    y_n = complex_normal(rng, 1)[0]
    projected = belief_of(m_project(np_n, gamma, y_n, prior), prior)
    exact = condition_gaussian(prior, gamma, y_n, np_n)
    np.testing.assert_allclose(projected.mean, exact.mean, atol=1e-10, rtol=1e-10)
    np.testing.assert_allclose(projected.var, exact.var, atol=1e-10, rtol=1e-10)


def test_step_zero_damping_keeps_state():
    op, prior, _, y = dense_instance(6, 3, 0)
    state = iga_step(IgaState.initial(6, 3, 1.0), op, y, prior)
    frozen = IgaState(state.theta_n, state.nu_n, state.theta_0, state.nu_0,
                      state.theta_0n, state.nu_0n, 0.0, state.t)
    nxt = iga_step(frozen, op, y, prior)
    assert nxt.t == state.t + 1
    for name in ("theta_n", "nu_n", "theta_0", "nu_0"):
        np.testing.assert_array_equal(getattr(nxt, name), getattr(state, name))


def test_step_two_observations_hand_sums():
    # M=1, D=1, noise 1, A=[1;1], y=[1;1], d=1, zero start:
    # each projection gives xi = (2, -1), so every parameter collects the
    # other observation's xi and the objective collects both.
    op = DenseOperator(np.ones((2, 1)))
    prior = PriorModel(np.ones(1), 1.0)
    state = iga_step(IgaState.initial(2, 1, 1.0), op, np.ones(2), prior)
    np.testing.assert_allclose(state.theta_0n[:, 0], [2, 2])
    np.testing.assert_allclose(state.nu_0n[:, 0], [-1, -1])
    np.testing.assert_allclose(state.theta_n[:, 0], [2, 2])
    np.testing.assert_allclose(state.nu_n[:, 0], [-1, -1])
    np.testing.assert_allclose(state.theta_0, [4])
    np.testing.assert_allclose(state.nu_0, [-2])


def test_sonp_synchrony_and_negativity():
    op, prior, _, y = dense_instance(16, 4, 1)
    result = iga_run(op, y, prior, 0.3, max_iter=60, tol=1e-300)
    for row in result.trace:
        assert row["nu_spread"] == 0.0
        assert row["nu_max"] < 0


def test_run_matches_mmse_two_obs():
    op = DenseOperator(np.ones((2, 1)))
    prior = PriorModel(np.ones(1), 1.0)
    y = np.array([1.0, 0.5j])
    res = iga_run(op, y, prior, 0.5, max_iter=5000, tol=1e-12)
    assert res.converged
    np.testing.assert_allclose(res.belief.mean, mmse(op, prior, y).mean, atol=1e-8)


def test_run_fixed_point_conditions():
    op, prior, _, y = dense_instance(32, 8, 2)
    state, belief, trace = iga_run(op, y, prior, 0.5, max_iter=5000, tol=1e-10)
    assert trace[-1]["residual"] <= 1e-10
    assert e_condition_residual(state) <= 1e-8
    assert m_condition_residual(state, op, y, prior) <= 1e-8
    ref = mmse(op, prior, y)
    np.testing.assert_allclose(belief.mean, ref.mean, atol=1e-7)
    # only the mean is exact; the variances are a diagonal approximation


def test_run_rejects_bad_damping():
    op, prior, _, y = dense_instance(4, 2, 0)
    for d in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidArgumentError):
            iga_run(op, y, prior, d)


def test_iga_consistency_error_nonnegative_and_guarded():
    op, prior, _, y = dense_instance(16, 4, 3)
    state = iga_run(op, y, prior, 0.5, max_iter=3000).state
    assert iga_consistency_error(state, prior) >= 0
    with pytest.raises(InvalidArgumentError):
        IgaState.initial(1, 4, 0.5)


def test_iga_consistency_trend_fixed_load():
    # fixed M/N = 1/8, total prior power held at 8 so the statistic is
    # comparable across sizes
    stats = {}
    for m, n in ((8, 64), (32, 256)):
        vals = []
        for seed in range(50):
            op = DenseOperator.random_unit(n, m, seed)
            rng = make_rng(seed, 5)
            v = np.exp(rng.uniform(np.log(0.1), np.log(10), m))
            prior = PriorModel(8.0 * v / v.sum(), 1.0)
            h = complex_normal(rng, m, prior.variances)
            y = op.apply(h) + complex_normal(rng, n, 1.0)
            state = iga_run(op, y, prior, 0.5, max_iter=4000, tol=1e-11).state
            vals.append(iga_consistency_error(state, prior))
        stats[m] = np.mean(vals)
    assert stats[32] < stats[8]


def test_trace_csv(tmp_path):
    op, prior, _, y = dense_instance(8, 2, 0)
    res = iga_run(op, y, prior, 0.5, max_iter=5)
    path = tmp_path / "t.csv"
    write_iga_trace(res.trace, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == IGA_TRACE_COLUMNS
    assert len(rows) == 6


def test_natural_parameter_round_trip():
    p = NaturalParameter(np.array([1 + 1j, -2j]), np.array([-0.5, 0.0]))
    q = NaturalParameter.from_dict(p.to_dict())
    np.testing.assert_array_equal(p.theta, q.theta)
    np.testing.assert_array_equal((p + q).nu, 2 * p.nu)
    np.testing.assert_array_equal((p - q).theta, 0)
