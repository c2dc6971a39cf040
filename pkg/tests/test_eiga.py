import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_instance, random_variances
from infogeom.analysis import eigs_of_iteration_matrix, iteration_matrix
from infogeom.eiga import (
    EIGA_TRACE_COLUMNS,
    EigaResult,
    EigaState,
    eiga_run,
    refresh_cache,
    update_nu,
    update_theta,
    virtual_noise,
    write_eiga_trace,
)
from infogeom.exceptions import DivergenceError, InvalidArgumentError, UnsupportedConfigurationError
from infogeom.model import PriorModel
from infogeom.operators import DenseOperator
from infogeom.oracle import eiga_fixed_point_mu, solve_nu_fixed_point
from infogeom.rng import complex_normal, make_rng


def _prior(variances, virtual):
    return PriorModel(np.asarray(variances, float), virtual, virtual)


# -- virtual noise -----------------------------------------------------------

def test_virtual_noise_examples():
    assert virtual_noise(1.0, [1.0], 2) == pytest.approx(0.5, abs=1e-15)
    assert virtual_noise(1.0, [2.0], 3) == pytest.approx(0.6, abs=1e-15)
    assert virtual_noise(2.0, [1.0], 2) > virtual_noise(1.0, [1.0], 2)
    # closed form x^2/(x+1) for D=I, M=1, N=2
    assert virtual_noise(3.0, [1.0], 2) == pytest.approx(9 / 4)


def test_virtual_noise_trace_form():
    d = random_variances(5, 0)
    x, n = 0.7, 12
    trace = np.trace(np.linalg.inv(np.diag(1 / d) + (n - 1) / x * np.eye(5)))
    assert virtual_noise(x, d, n) == pytest.approx(x - trace, rel=1e-13)


def test_virtual_noise_needs_fewer_vars():
    with pytest.raises(UnsupportedConfigurationError):
        virtual_noise(1.0, np.ones(3), 3)


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 10), extra=st.integers(1, 40), seed=st.integers(0, 1000),
       x=st.floats(1e-4, 1e4))
def test_virtual_noise_between_zero_and_x(m, extra, seed, x):
    f = virtual_noise(x, random_variances(m, seed), m + extra)
    assert 0 < f < x


# -- cache and second-order recursion ---------------------------------------

def test_refresh_cache_examples():
    prior = _prior([1, 1], 1.0)
    s = EigaState.initial(prior, 1.0)
    np.testing.assert_allclose(s.lam, [1, 1])
    assert s.beta == 3
    s = refresh_cache(EigaState.initial(prior, 1.0, nu=[-1, -1]), prior)
    np.testing.assert_allclose(s.lam, [0.5, 0.5])
    assert s.beta == 2
    assert s.beta > s.lam.max()


def test_update_nu_hand_iterates():
    prior = _prior([1, 1], 1.0)
    s = EigaState.initial(prior, 1.0)
    nu1 = update_nu(s, 3)
    np.testing.assert_allclose(nu1, [-1, -1])
    s = refresh_cache(EigaState.initial(prior, 1.0, nu=nu1), prior)
    np.testing.assert_allclose(update_nu(s, 3), [-4 / 3, -4 / 3])


def test_update_nu_fixed_point_sqrt2():
    prior = _prior([1, 1], 1.0)
    nu = np.zeros(2)
    for _ in range(200):
        s = refresh_cache(EigaState.initial(prior, 1.0, nu=nu), prior)
        nu = update_nu(s, 3)
    np.testing.assert_allclose(nu, [-np.sqrt(2)] * 2, atol=1e-12)
    # scalar equation nu = -2(1 - nu)/(2 - nu)
    assert nu[0] == pytest.approx(-2 * (1 - nu[0]) / (2 - nu[0]))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 8), n=st.integers(2, 64), seed=st.integers(0, 1000), d=st.floats(0.05, 1.0))
def test_nu_sequence_monotone_bounded(m, n, seed, d):
    prior = _prior(random_variances(m, seed), 0.3)
    s = EigaState.initial(prior, d)
    lower = -(n - 1) / prior.virtual_noise_var
    for _ in range(50):
        nu = update_nu(s, n)
        assert np.all(nu <= s.nu + 1e-13 * np.abs(s.nu))
        assert np.all(nu < 0)
        # beta - lam_i exceeds the virtual noise by the other lam_j, so the
        # lower end is attained only when M = 1
        assert np.all(nu > lower) if m > 1 else np.all(nu >= lower * (1 + 1e-15))
        s = refresh_cache(EigaState(s.theta, nu, s.lam, s.beta, d, s.t + 1), prior)


def test_nu_fixed_point_independent_of_damping():
    # the second-order recursion does not read theta, so it is run alone
    _, prior, _, _ = dense_instance(32, 8, 0, calibrate=True)
    fixed = []
    for d in (0.1, 0.5, 1.0):
        s = EigaState.initial(prior, d)
        for t in range(5000):
            s = refresh_cache(EigaState(s.theta, update_nu(s, 32), s.lam, s.beta, d, t + 1), prior)
        fixed.append(s.nu)
    for nu in fixed[1:]:
        np.testing.assert_allclose(nu, fixed[0], atol=1e-9, rtol=0)


def test_fixed_point_identity_and_bounds():
    for seed in range(5):
        _, prior, _, _ = dense_instance(24, 6, seed, calibrate=True)
        n = 24
        nu = solve_nu_fixed_point(prior, n)
        lam = 1 / (1 / prior.variances - nu)
        beta = prior.virtual_noise_var + lam.sum()
        rhs = 1 / prior.variances - 1 / (lam - lam**2 / beta)
        np.testing.assert_allclose(n / (n - 1) * nu, rhs, rtol=1e-9, atol=1e-9)
        assert lam.max() < beta / n


# -- first-order recursion ---------------------------------------------------

def test_update_theta_zero():
    op, prior, _, _ = dense_instance(8, 3, 0)
    s = EigaState.initial(prior, 0.5)
    np.testing.assert_array_equal(update_theta(s, op, np.zeros(3, complex)), 0)


def test_update_theta_scalar_hand_value():
    op = DenseOperator(np.ones((2, 1)))
    prior = _prior([1.0], 1.0)
    s = EigaState.initial(prior, 0.5)
    aty = op.adjoint_apply(np.ones(2))
    assert update_theta(s, op, aty)[0] == pytest.approx(1.0)


def _dense_affine_update(op, prior, theta, nu, d, y):
    """Independent dense form: B_t theta + offset."""
    a = op.to_dense()
    n, m = a.shape
    lam = 1 / (1 / prior.variances - nu)
    beta = prior.virtual_noise_var + lam.sum()
    scale = np.diag((n - 1) / beta / (1 - lam / beta))
    b = scale @ (np.eye(m) - a.conj().T @ a / n) @ np.diag(lam)
    offset = d * scale @ (2 * a.conj().T @ y / n)
    return (d * b + (1 - d) * np.eye(m)) @ theta + offset


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 20), m=st.integers(1, 8), seed=st.integers(0, 1000), d=st.floats(0.01, 1.0))
def test_update_theta_matches_dense_form(n, m, seed, d):
    op, prior, _, y = dense_instance(n, m, seed)
    rng = make_rng(seed, 8)
    theta = complex_normal(rng, m)
    nu = -rng.uniform(0, 5, m)
    s = refresh_cache(EigaState.initial(prior, d, theta=theta, nu=nu), prior)
    got = update_theta(s, op, op.adjoint_apply(y))
    ref = _dense_affine_update(op, prior, theta, nu, d, y)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_update_theta_counts_operator_calls():
    op, prior, _, y = dense_instance(8, 3, 0)

    class Counting(DenseOperator):
        calls = {"apply": 0, "adjoint": 0}

        def apply(self, x):
            self.calls["apply"] += 1
            return super().apply(x)

        def adjoint_apply(self, s):
            self.calls["adjoint"] += 1
            return super().adjoint_apply(s)

    counting = Counting(op.to_dense())
    s = EigaState.initial(prior, 0.5, theta=np.ones(3))
    update_theta(s, counting, op.adjoint_apply(y))
    assert counting.calls == {"apply": 1, "adjoint": 1}


def test_update_theta_dimension_check():
    op, prior, _, _ = dense_instance(8, 3, 0)
    with pytest.raises(InvalidArgumentError):
        update_theta(EigaState.initial(prior, 0.5), op, np.zeros(4, complex))


def test_affine_map_matches_iteration_matrix():
    op, prior, _, y = dense_instance(16, 5, 3, calibrate=True)
    nu = solve_nu_fixed_point(prior, 16)
    d = 0.4
    bt = np.asarray(iteration_matrix(op, prior, nu, d))
    s0 = refresh_cache(EigaState.initial(prior, d, nu=np.clip(nu, -(15) / prior.virtual_noise_var, 0)), prior)
    aty = op.adjoint_apply(y)
    offset = update_theta(s0, op, aty)
    rng = make_rng(0, 0)
    for _ in range(5):
        x = complex_normal(rng, 5)
        s = refresh_cache(EigaState(x, s0.nu, s0.lam, s0.beta, d, 0), prior)
        np.testing.assert_allclose(update_theta(s, op, aty) - offset, bt @ x, atol=1e-10)


# -- full runs ---------------------------------------------------------------

def test_run_scalar_instance_matches_closed_form():
    op = DenseOperator(np.ones((2, 1)))
    prior = _prior([1.0], 1.0)
    y = np.ones(2)
    res = eiga_run(op, y, prior, 0.5, max_iter=5000, tol=1e-10)
    assert res.converged
    nu = solve_nu_fixed_point(prior, 2)
    np.testing.assert_allclose(res.belief.mean, eiga_fixed_point_mu(op, prior, y, nu), atol=1e-8)


def test_run_output_variances_from_fixed_point():
    op, prior, _, y = dense_instance(32, 8, 4, calibrate=True)
    res = eiga_run(op, y, prior, max_iter=5000, tol=1e-12)
    nu = solve_nu_fixed_point(prior, 32)
    np.testing.assert_allclose(res.belief.var, 1 / (1 / prior.variances - 32 / 31 * nu), rtol=1e-9)
    assert np.all(res.objective_np.nu < 0)


def test_divergence_witness_agrees_with_spectrum():
    n, m = 32, 8
    op = DenseOperator(np.ones((n, m)))
    prior = _prior(np.ones(m), 1.0)
    nu = solve_nu_fixed_point(prior, n)
    d = 2 * (2 / m)
    eigs, _ = eigs_of_iteration_matrix(iteration_matrix(op, prior, nu, d))
    assert np.max(np.abs(eigs)) > 1
    y = op.apply(np.ones(m)) + complex_normal(make_rng(0, 0), n)
    with pytest.raises(DivergenceError) as err:
        eiga_run(op, y, prior, d, max_iter=5000)
    assert err.value.iteration > 0


def test_run_rejects_bad_arguments():
    op, prior, _, y = dense_instance(8, 3, 0)
    for d in (0.0, 1.2):
        with pytest.raises(InvalidArgumentError):
            eiga_run(op, y, prior, d)
    with pytest.raises(InvalidArgumentError):
        eiga_run(op, y, prior, 0.5, nu0=np.full(3, -1e9))
    with pytest.raises(InvalidArgumentError):
        eiga_run(op, y[:4], prior, 0.5)


def test_increasing_branch_reaches_same_fixed_point():
    # empirical check only: start at the lower end of the admissible range
    for seed in range(3):
        op, prior, _, y = dense_instance(32, 8, seed, calibrate=True)
        low = np.full(8, -(31) / prior.virtual_noise_var)
        a = eiga_run(op, y, prior, 0.5, max_iter=20000, tol=1e-12)
        b = eiga_run(op, y, prior, 0.5, max_iter=20000, tol=1e-12, nu0=low)
        np.testing.assert_allclose(b.common_np.nu, a.common_np.nu, rtol=1e-8)


def test_result_json_and_trace(tmp_path):
    op, prior, _, y = dense_instance(16, 4, 0)
    res = eiga_run(op, y, prior, 0.5, max_iter=50)
    back = EigaResult.from_json(res.to_json())
    np.testing.assert_array_equal(back.belief.mean, res.belief.mean)
    np.testing.assert_array_equal(back.objective_np.nu, res.objective_np.nu)
    assert back.iterations == res.iterations and back.converged == res.converged
    path = tmp_path / "trace.csv"
    write_eiga_trace(res.trace, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == EIGA_TRACE_COLUMNS
    assert len(rows) == res.iterations + 1
