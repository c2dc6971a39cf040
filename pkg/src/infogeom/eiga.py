"""Efficient information geometry approach (EIGA).

EIGA replaces IGA's ``N`` per-observation natural parameters by one common
parameter ``(theta, nu)``. With a unit-magnitude operator the second-order
part decouples from the data and follows a scalar-coupled recursion, and the
first-order part becomes an affine map that needs one forward and one adjoint
product of ``A`` per iteration. A virtual noise variance, smaller than the
true one, is used inside the recursions so that the fixed-point mean
approaches the MMSE estimate as ``N`` grows.
"""

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import (
    DivergenceError,
    InvalidArgumentError,
    UnsupportedConfigurationError,
)
from .iga import GaussianBelief, NaturalParameter, belief_of
from .operators import damping_bounds
from .validation import (
    check_complex_vector,
    check_damping,
    check_positive_float,
    check_positive_int,
    check_real_vector,
)

# |theta| beyond this is treated as divergence even while still finite
BLOWUP = 1e150


def virtual_noise(noise_var, prior_variances, n_obs):
    """Calibrated virtual noise variance ``f(noise_var)``.

    ``f(x) = x - sum_i d_i x / (x + d_i (N - 1))``, i.e. ``x`` minus the
    trace of ``(D^-1 + (N-1)/x I)^-1``. For ``M < N`` the map is increasing
    and ``0 < f(x) < x``.

    Parameters
    ----------
    noise_var : float
    prior_variances : array_like of shape (M,)
    n_obs : int

    Raises
    ------
    UnsupportedConfigurationError
        If ``M >= N``.
    """
    x = check_positive_float(noise_var, "noise_var")
    d = check_real_vector(prior_variances, name="prior_variances", positive=True)
    n_obs = check_positive_int(n_obs, "n_obs")
    if d.size >= n_obs:
        raise UnsupportedConfigurationError(
            f"virtual noise calibration needs M < N, got M={d.size}, N={n_obs}"
        )
    return float(x - np.sum(d * x / (x + d * (n_obs - 1))))


@dataclass(frozen=True, eq=False)
class EigaState:
    """Common natural parameter plus the cached ``Lambda`` and ``beta``.

    Attributes
    ----------
    theta : ndarray of complex, shape (M,)
    nu : ndarray of float, shape (M,)
    lam : ndarray of float, shape (M,)
        ``1 / (1/D - nu)``.
    beta : float
        ``virtual_noise_var + sum(lam)``.
    damping : float
    t : int
    """

    theta: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    beta: float
    damping: float
    t: int = 0

    @classmethod
    def initial(cls, prior, damping, theta=None, nu=None, n_obs=None):
        """State at ``t = 0`` with a fresh cache (zeros by default).

        When ``n_obs`` is given, ``nu`` is checked against the admissible
        start range ``[-(N-1)/virtual_noise_var, 0]``.
        """
        m = prior.dim
        theta = np.zeros(m, complex) if theta is None else check_complex_vector(theta, m, "theta")
        nu = np.zeros(m) if nu is None else check_real_vector(nu, m, "nu")
        if np.any(nu > 0):
            raise InvalidArgumentError("initial nu must be nonpositive")
        if n_obs is not None and np.any(nu < -(n_obs - 1) / prior.virtual_noise_var):
            raise InvalidArgumentError("initial nu must be >= -(N-1)/virtual_noise_var")
        state = cls(theta, nu, np.zeros(m), 0.0, check_damping(damping, allow_zero=True), 0)
        return refresh_cache(state, prior)


def refresh_cache(state, prior):
    """Recompute ``lam`` and ``beta`` from ``state.nu``."""
    if np.any(state.nu > 0):
        raise InvalidArgumentError("nu must be nonpositive")
    lam = 1.0 / (1.0 / prior.variances - state.nu)
    beta = prior.virtual_noise_var + float(np.sum(lam))
    return replace(state, lam=lam, beta=beta)


def update_nu(state, n_obs):
    """Damped second-order update ``d g(nu) + (1 - d) nu``.

    ``g(nu)_i = -(N - 1) / (beta - lam_i)``.
    """
    g = -(n_obs - 1) / (state.beta - state.lam)
    return state.damping * g + (1.0 - state.damping) * state.nu


def update_theta(state, op, aty):
    """Damped first-order update.

    Evaluates ``(2/beta) J A^H y - (1/beta) J A^H A Lam theta
    + (N J + (1 - d N)) theta`` with the diagonal
    ``J = d (N-1)/N (1 - lam/beta)^-1``. Exactly one ``apply`` and one
    ``adjoint_apply`` are made.

    Parameters
    ----------
    state : EigaState
    op : MeasurementOperator
    aty : ndarray of complex, shape (M,)
        ``A^H y``, computed once per run.
    """
    if aty.shape != (op.n_cols,):
        raise InvalidArgumentError(f"A^H y must have length {op.n_cols}")
    n = op.n_rows
    d, beta = state.damping, state.beta
    j_diag = (d * (n - 1) / n) / (1.0 - state.lam / beta)
    back = op.adjoint_apply(op.apply(state.lam * state.theta))
    return (j_diag / beta) * (2.0 * aty - back) + (n * j_diag + (1.0 - d * n)) * state.theta


def _rel_inf(new, old):
    scale = np.max(np.abs(new))
    delta = np.max(np.abs(new - old))
    if delta == 0.0:
        return 0.0
    return float(delta / scale) if scale > 0 else float("inf")


@dataclass(eq=False)
class EigaResult:
    """Output of :func:`eiga_run`.

    Attributes
    ----------
    objective_np : NaturalParameter
        ``N/(N-1)`` times the common parameter.
    belief : GaussianBelief
        Mean and variances from ``objective_np``.
    iterations : int
    converged : bool
    trace : list of dict
        Rows with ``t, theta_residual, nu_residual, beta``.
    common_np : NaturalParameter
        The common parameter itself.
    damping : float
    beta : float
        ``beta`` at the final ``nu``.
    """

    objective_np: NaturalParameter
    belief: GaussianBelief
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    common_np: NaturalParameter = None
    damping: float = None
    beta: float = None

    def to_dict(self):
        return {
            "objective_np": self.objective_np.to_dict(),
            "belief": self.belief.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
            "common_np": self.common_np.to_dict() if self.common_np is not None else None,
            "damping": self.damping,
            "beta": self.beta,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        common = data.get("common_np")
        return cls(
            NaturalParameter.from_dict(data["objective_np"]),
            GaussianBelief.from_dict(data["belief"]),
            int(data["iterations"]),
            bool(data["converged"]),
            list(data["trace"]),
            NaturalParameter.from_dict(common) if common is not None else None,
            data.get("damping"),
            data.get("beta"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


EIGA_TRACE_COLUMNS = ("t", "theta_residual", "nu_residual", "beta")


def write_eiga_trace(trace, path):
    """Write an EIGA trace as CSV with columns ``EIGA_TRACE_COLUMNS``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EIGA_TRACE_COLUMNS)
        for row in trace:
            writer.writerow([row["t"]] + [repr(float(row[c])) for c in EIGA_TRACE_COLUMNS[1:]])


def default_damping(op, k_users=None):
    """0.9 times the largest sufficient damping bound, capped at 1."""
    return min(1.0, 0.9 * damping_bounds(op, k_users).tightest())


def eiga_run(op, y, prior, damping=None, max_iter=2000, tol=1e-8, theta0=None, nu0=None):
    """Run EIGA to a fixed point.

    Parameters
    ----------
    op : MeasurementOperator
    y : Observation or array_like of complex, shape (N,)
    prior : PriorModel
        ``virtual_noise_var`` drives the recursions; the output belief uses
        the prior variances ``D``.
    damping : float, optional
        Defaults to :func:`default_damping`.
    max_iter : int, default=2000
    tol : float, default=1e-8
        Stop when both relative infinity-norm changes, of ``theta`` and of
        ``nu``, are at most ``tol``.
    theta0, nu0 : array_like, optional
        Starting point; zeros by default.

    Returns
    -------
    EigaResult

    Raises
    ------
    DivergenceError
        If ``theta`` turns non-finite or exceeds ``BLOWUP`` in magnitude.
    """
    n, m = op.n_rows, op.n_cols
    if m != prior.dim:
        raise InvalidArgumentError(f"operator has {m} columns, prior has {prior.dim}")
    if n < 2:
        raise InvalidArgumentError("EIGA needs at least two observations")
    y = check_complex_vector(getattr(y, "y", y), n, "y")
    damping = default_damping(op) if damping is None else check_damping(damping)
    max_iter = check_positive_int(max_iter, "max_iter")
    tol = check_positive_float(tol, "tol")

    aty = op.adjoint_apply(y)
    state = EigaState.initial(prior, damping, theta0, nu0, n_obs=n)
    trace = []
    converged = False
    for _ in range(max_iter):
        theta = update_theta(state, op, aty)
        nu = update_nu(state, n)
        t = state.t + 1
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(nu))):
            raise DivergenceError(f"non-finite EIGA iterate at t={t}", t)
        if np.max(np.abs(theta)) > BLOWUP:
            raise DivergenceError(f"EIGA iterate exploded at t={t}", t)
        r_theta = _rel_inf(theta, state.theta)
        r_nu = _rel_inf(nu, state.nu)
        state = refresh_cache(EigaState(theta, nu, state.lam, state.beta, damping, t), prior)
        trace.append({"t": t, "theta_residual": r_theta, "nu_residual": r_nu, "beta": state.beta})
        if r_theta <= tol and r_nu <= tol:
            converged = True
            break

    scale = n / (n - 1)
    objective = NaturalParameter(scale * state.theta, scale * state.nu)
    return EigaResult(
        objective_np=objective,
        belief=belief_of(objective, prior),
        iterations=state.t,
        converged=converged,
        trace=trace,
        common_np=NaturalParameter(state.theta, state.nu),
        damping=damping,
        beta=state.beta,
    )
