"""Reference information geometry approach (IGA).

IGA keeps one natural parameter ``(theta_n, nu_n)`` per observation. Each
iteration m-projects the Gaussian that combines the prior, the parameter
``theta_n, nu_n`` and the single likelihood term of observation ``n`` onto the
fully factorized Gaussians, takes the difference to the input parameter as
the approximation of that likelihood term, and redistributes the sum of the
approximations with damping.

The implementation is vectorized over observations but otherwise direct: it
materializes ``A`` and costs ``O(NM)`` memory and time per iteration. It is
the semantic reference that EIGA is checked against, not a fast solver.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DivergenceError, InvalidArgumentError, InvalidStateError
from .validation import (
    check_complex_vector,
    check_damping,
    check_positive_float,
    check_positive_int,
    check_real_vector,
    complex_to_pairs,
    pairs_to_complex,
)


@dataclass(frozen=True, eq=False)
class NaturalParameter:
    """First- and second-order natural parameters of a factorized Gaussian.

    Parameters
    ----------
    theta : ndarray of complex, shape (M,)
    nu : ndarray of float, shape (M,)
    """

    theta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        theta = check_complex_vector(self.theta, name="theta")
        nu = check_real_vector(self.nu, theta.shape[0], name="nu")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "nu", nu)

    @property
    def dim(self):
        return int(self.theta.shape[0])

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim, complex), np.zeros(dim))

    def __add__(self, other):
        return NaturalParameter(self.theta + other.theta, self.nu + other.nu)

    def __sub__(self, other):
        return NaturalParameter(self.theta - other.theta, self.nu - other.nu)

    def scale(self, c):
        return NaturalParameter(c * self.theta, c * self.nu)

    def to_dict(self):
        return {"theta": complex_to_pairs(self.theta), "nu": [float(v) for v in self.nu]}

    @classmethod
    def from_dict(cls, data):
        return cls(pairs_to_complex(data["theta"]), np.asarray(data["nu"], float))


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean and marginal variances of a factorized Gaussian."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = check_complex_vector(self.mean, name="mean")
        var = check_real_vector(self.var, mean.shape[0], name="var", positive=True)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def to_dict(self):
        return {"mean": complex_to_pairs(self.mean), "var": [float(v) for v in self.var]}

    @classmethod
    def from_dict(cls, data):
        return cls(pairs_to_complex(data["mean"]), np.asarray(data["var"], float))


def _precision(prior_variances, nu):
    prec = 1.0 / prior_variances - nu
    if np.any(prec <= 0) or not np.all(np.isfinite(prec)):
        raise InvalidStateError("1/D - nu must be positive elementwise")
    return prec


def belief_of(np_param, prior):
    """Mean and marginal variances of the Gaussian with parameter ``np_param``.

    ``var = 1 / (1/D - nu)`` and ``mean = var * theta / 2``.

    Raises
    ------
    InvalidStateError
        If some ``1/D_ii - nu_i`` is not positive.
    """
    if np_param.dim != prior.dim:
        raise InvalidArgumentError("parameter and prior dimensions differ")
    var = 1.0 / _precision(prior.variances, np_param.nu)
    return GaussianBelief(0.5 * var * np_param.theta, var)


def _project_rows(theta_n, nu_n, conj_a, abs2, y, prior_variances, noise_var):
    """m-projections of all observations at once.

    All arrays are stacked with observations along axis 0: ``conj_a[n]`` is
    ``gamma_n`` and ``abs2[n]`` is ``|gamma_n|**2``.
    """
    lam = 1.0 / _precision(prior_variances[None, :], nu_n)
    beta = noise_var + np.sum(abs2 * lam, axis=1)
    # gamma^H Lambda theta = sum_i a_ni lam_i theta_i
    inner = np.sum(conj_a.conj() * lam * theta_n, axis=1)
    shrink = 1.0 - lam * abs2 / beta[:, None]
    if np.any(shrink <= 0):
        raise InvalidStateError("diagonal factor of the m-projection is singular")
    theta_0n = (((2.0 * y - inner) / beta)[:, None] * conj_a + theta_n) / shrink
    post_var = lam * shrink
    nu_0n = 1.0 / prior_variances[None, :] - 1.0 / post_var
    return theta_0n, nu_0n


def m_project(np_n, gamma_n, y_n, prior):
    """m-projection of observation ``n``'s auxiliary Gaussian.

    Parameters
    ----------
    np_n : NaturalParameter
        ``(theta_n, nu_n)`` standing in for all other observations.
    gamma_n : array_like of complex, shape (M,)
        Conjugate of row ``n`` of ``A``.
    y_n : complex
        Observation ``n``.
    prior : PriorModel
        Uses the true ``noise_var``.

    Returns
    -------
    NaturalParameter
        Parameter of the factorized Gaussian with the same means and
        marginal variances.
    """
    gamma_n = check_complex_vector(gamma_n, np_n.dim, "gamma_n")
    if np.any(np_n.nu > 0):
        raise InvalidArgumentError("nu_n must be nonpositive")
    theta_0n, nu_0n = _project_rows(
        np_n.theta[None, :],
        np_n.nu[None, :],
        gamma_n[None, :],
        np.abs(gamma_n[None, :]) ** 2,
        np.atleast_1d(np.complex128(y_n)),
        prior.variances,
        prior.noise_var,
    )
    return NaturalParameter(theta_0n[0], nu_0n[0])


@dataclass(eq=False)
class IgaState:
    """Stacked IGA parameters.

    Attributes
    ----------
    theta_n, nu_n : ndarray of shape (N, M)
        Per-observation parameters.
    theta_0, nu_0 : ndarray of shape (M,)
        Objective parameter.
    theta_0n, nu_0n : ndarray of shape (N, M)
        The latest m-projections (zeros before the first step).
    damping : float
    t : int
    """

    theta_n: np.ndarray
    nu_n: np.ndarray
    theta_0: np.ndarray
    nu_0: np.ndarray
    theta_0n: np.ndarray
    nu_0n: np.ndarray
    damping: float
    t: int = 0

    @classmethod
    def initial(cls, n_obs, dim, damping):
        """Zero initialization for every parameter."""
        n_obs = check_positive_int(n_obs, "n_obs", minimum=2)
        dim = check_positive_int(dim, "dim")
        zc = np.zeros((n_obs, dim), complex)
        zr = np.zeros((n_obs, dim))
        return cls(zc, zr, np.zeros(dim, complex), np.zeros(dim), zc.copy(), zr.copy(),
                   check_damping(damping, allow_zero=True))

    @property
    def n_obs(self):
        return int(self.theta_n.shape[0])

    @property
    def per_obs(self):
        return [NaturalParameter(t, v) for t, v in zip(self.theta_n, self.nu_n)]

    @property
    def projections(self):
        return [NaturalParameter(t, v) for t, v in zip(self.theta_0n, self.nu_0n)]

    @property
    def objective(self):
        return NaturalParameter(self.theta_0, self.nu_0)


class _DenseRows:
    """Cached ``conj(A)`` and ``|A|**2`` for the IGA loop."""

    def __init__(self, op):
        dense = op.to_dense()
        self.conj_a = dense.conj()
        # unit-magnitude rows make the diagonal weights exactly one
        self.abs2 = np.ones(dense.shape) if op.unit_magnitude else np.abs(dense) ** 2


def iga_step(state, op, y, prior, _rows=None):
    """One damped IGA iteration; returns a new state.

    Parameters
    ----------
    state : IgaState
    op : MeasurementOperator
    y : Observation or array_like
    prior : PriorModel
    """
    y = getattr(y, "y", y)
    y = check_complex_vector(y, op.n_rows, "y")
    rows = _rows if _rows is not None else _DenseRows(op)
    if state.n_obs != op.n_rows:
        raise InvalidArgumentError("state and operator disagree on N")
    theta_0n, nu_0n = _project_rows(
        state.theta_n, state.nu_n, rows.conj_a, rows.abs2, y, prior.variances, prior.noise_var
    )
    xi_theta = theta_0n - state.theta_n
    xi_nu = nu_0n - state.nu_n
    sum_theta = xi_theta.sum(axis=0)
    sum_nu = xi_nu.sum(axis=0)
    d = state.damping
    return IgaState(
        theta_n=d * (sum_theta[None, :] - xi_theta) + (1 - d) * state.theta_n,
        nu_n=d * (sum_nu[None, :] - xi_nu) + (1 - d) * state.nu_n,
        theta_0=d * sum_theta + (1 - d) * state.theta_0,
        nu_0=d * sum_nu + (1 - d) * state.nu_0,
        theta_0n=theta_0n,
        nu_0n=nu_0n,
        damping=d,
        t=state.t + 1,
    )


def _rel_change(new, old):
    return float(np.max(np.abs(new - old)) / (1.0 + np.max(np.abs(new))))


@dataclass(eq=False)
class IgaResult:
    """Outcome of :func:`iga_run`; unpacks as ``(state, belief, trace)``."""

    state: IgaState
    belief: GaussianBelief
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return self.state.t

    def __iter__(self):
        return iter((self.state, self.belief, self.trace))


def iga_run(op, y, prior, damping, max_iter=2000, tol=1e-10, state=None):
    """Iterate :func:`iga_step` to a fixed point.

    Parameters
    ----------
    op : MeasurementOperator
    y : Observation or array_like
    prior : PriorModel
    damping : float
        Damping factor in (0, 1].
    max_iter : int, default=2000
    tol : float, default=1e-10
        Stop when the largest relative infinity-norm change over all
        parameters, ``|delta| / (1 + |param|)``, drops to ``tol``.
    state : IgaState, optional
        Starting point; zeros by default.

    Returns
    -------
    IgaResult
        Trace entries hold ``t, residual, nu_min, nu_max, theta_norm`` and
        ``nu_spread`` (largest disagreement between the ``nu_n``).

    Raises
    ------
    DivergenceError
        On a non-finite parameter.
    """
    damping = check_damping(damping)
    max_iter = check_positive_int(max_iter, "max_iter")
    tol = check_positive_float(tol, "tol")
    y = check_complex_vector(getattr(y, "y", y), op.n_rows, "y")
    if op.n_rows < 2:
        raise InvalidArgumentError("IGA needs at least two observations")
    if state is None:
        state = IgaState.initial(op.n_rows, op.n_cols, damping)
    rows = _DenseRows(op)
    trace = []
    converged = False
    for _ in range(max_iter):
        new = iga_step(state, op, y, prior, _rows=rows)
        arrays = (new.theta_n, new.nu_n, new.theta_0, new.nu_0)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise DivergenceError(f"non-finite IGA parameter at iteration {new.t}", new.t)
        residual = max(
            _rel_change(new.theta_n, state.theta_n),
            _rel_change(new.nu_n, state.nu_n),
            _rel_change(new.theta_0, state.theta_0),
            _rel_change(new.nu_0, state.nu_0),
        )
        trace.append({
            "t": new.t,
            "residual": residual,
            "nu_min": float(min(new.nu_n.min(), new.nu_0.min())),
            "nu_max": float(max(new.nu_n.max(), new.nu_0.max())),
            "theta_norm": float(np.linalg.norm(new.theta_0)),
            "nu_spread": float(np.max(new.nu_n.max(axis=0) - new.nu_n.min(axis=0))),
        })
        state = new
        if residual <= tol:
            converged = True
            break
    return IgaResult(state, belief_of(state.objective, prior), trace, converged)


IGA_TRACE_COLUMNS = ("t", "residual", "nu_min", "nu_max", "theta_norm")


def write_iga_trace(trace, path):
    """Write an IGA trace as CSV with columns ``IGA_TRACE_COLUMNS``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IGA_TRACE_COLUMNS)
        for row in trace:
            writer.writerow([row["t"]] + [repr(float(row[c])) for c in IGA_TRACE_COLUMNS[1:]])


def e_condition_residual(state):
    """``|theta_0 - sum(theta_n)/(N-1)|`` and the same for ``nu`` (inf-norm)."""
    n = state.n_obs
    r_theta = np.max(np.abs(state.theta_0 - state.theta_n.sum(axis=0) / (n - 1)))
    r_nu = np.max(np.abs(state.nu_0 - state.nu_n.sum(axis=0) / (n - 1)))
    return float(max(r_theta, r_nu))


def m_condition_residual(state, op, y, prior):
    """Largest mismatch between the objective belief and each ``p_n``'s moments.

    The moments of ``p_n`` are taken from the m-projection of the current
    ``theta_n, nu_n`` (which matches them exactly).
    """
    y = check_complex_vector(getattr(y, "y", y), op.n_rows, "y")
    rows = _DenseRows(op)
    theta_0n, nu_0n = _project_rows(
        state.theta_n, state.nu_n, rows.conj_a, rows.abs2, y, prior.variances, prior.noise_var
    )
    var_n = 1.0 / (1.0 / prior.variances[None, :] - nu_0n)
    mean_n = 0.5 * var_n * theta_0n
    obj = belief_of(state.objective, prior)
    r_mean = np.max(np.abs(mean_n - obj.mean[None, :]))
    r_var = np.max(np.abs(var_n - obj.var[None, :]))
    return float(max(r_mean, r_var))


def iga_consistency_error(state, prior):
    """Weighted gap between each ``theta_n`` and ``(N-1)/N theta_0``.

    Returns ``(1/(N M)) sum_n (theta_n - c theta_0)^H D (theta_n - c theta_0)``
    with ``c = (N-1)/N`` for one realization.
    """
    n = state.n_obs
    if n < 2:
        raise InvalidArgumentError("requires N >= 2")
    diff = state.theta_n - ((n - 1) / n) * state.theta_0[None, :]
    total = np.sum(np.abs(diff) ** 2 * prior.variances[None, :])
    return float(total / (n * prior.dim))


theorem2_error = iga_consistency_error
