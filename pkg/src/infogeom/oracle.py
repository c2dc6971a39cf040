"""Dense ground-truth computations.

Everything here materializes ``A`` and solves small dense systems. These
routines exist to certify the matrix-free algorithms; the ``M <= 4096``
guard keeps them at desk scale.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .exceptions import (
    ConvergenceError,
    InvalidArgumentError,
    NumericalConditioningWarning,
)
from .iga import GaussianBelief
from .operators import DENSE_GUARD
from .validation import (
    check_complex_vector,
    check_positive_float,
    check_positive_int,
    check_real_vector,
)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class PosteriorExact:
    """Exact Gaussian posterior of ``h`` given ``y``.

    Attributes
    ----------
    mean : ndarray of complex, shape (M,)
    cov_diag : ndarray of float, shape (M,)
    full_cov_available : bool
    full_cov : ndarray of complex, shape (M, M) or None
    condition_estimate : float
        Estimated 1-norm condition number of the posterior precision.
    ill_conditioned : bool
        True when ``condition_estimate`` exceeds ``CONDITION_LIMIT``.
    """

    mean: np.ndarray
    cov_diag: np.ndarray
    full_cov_available: bool
    full_cov: np.ndarray = None
    condition_estimate: float = 1.0
    ill_conditioned: bool = False


def _dense(op):
    if op.n_cols > DENSE_GUARD:
        raise InvalidArgumentError(f"dense oracle needs M <= {DENSE_GUARD}, got {op.n_cols}")
    return op.to_dense()


def _cholesky_with_condition(matrix):
    """Lower Cholesky factor plus a LAPACK 1-norm condition estimate."""
    anorm = float(np.max(np.sum(np.abs(matrix), axis=0)))
    chol = scipy.linalg.cholesky(matrix, lower=True)
    rcond, info = lapack.zpocon(chol, anorm, uplo="L")
    cond = np.inf if info != 0 or rcond == 0 else 1.0 / rcond
    return chol, float(cond)


def posterior_precision(a, prior_variances, noise_var):
    """``D^-1 + A^H A / noise_var`` as a dense Hermitian matrix."""
    prec = a.conj().T @ a / noise_var
    prec[np.diag_indices_from(prec)] += 1.0 / prior_variances
    return prec


def mmse(op, prior, y, noise_var=None, full_cov=False):
    """Exact posterior mean and variances.

    Solves ``(D^-1 + A^H A / s) mu = A^H y / s`` by Cholesky factorization,
    which equals ``D (A^H A D + s I)^-1 A^H y``; the marginal variances are
    the diagonal of the inverse precision.

    Parameters
    ----------
    op : MeasurementOperator
    prior : PriorModel
    y : Observation or array_like
    noise_var : float, optional
        Defaults to ``prior.noise_var``.
    full_cov : bool, default=False
        Also return the full covariance.

    Returns
    -------
    PosteriorExact
        ``ill_conditioned`` is set (and a ``NumericalConditioningWarning``
        emitted) when the precision's condition estimate exceeds 1e12.
    """
    a = _dense(op)
    y = check_complex_vector(getattr(y, "y", y), op.n_rows, "y")
    s = prior.noise_var if noise_var is None else check_positive_float(noise_var, "noise_var")
    prec = posterior_precision(a, prior.variances, s)
    rhs = a.conj().T @ y / s
    try:
        chol, cond = _cholesky_with_condition(prec)
        mean = scipy.linalg.cho_solve((chol, True), rhs)
        # diag of P^-1 = column norms of L^-1
        l_inv = scipy.linalg.solve_triangular(chol, np.eye(op.n_cols), lower=True)
    except np.linalg.LinAlgError:
        # the factorization broke down in floating point. Rescale:
        # P = R^-1 (I + G) R^-1 with R = D^1/2 and G = R A^H A R / s, whose
        # inner factor has every eigenvalue >= 1
        root = np.sqrt(prior.variances)
        inner = root[:, None] * (a.conj().T @ a / s) * root[None, :]
        inner[np.diag_indices_from(inner)] += 1.0
        inner_chol = scipy.linalg.cholesky(inner, lower=True)
        mean = root * scipy.linalg.cho_solve((inner_chol, True), root * rhs)
        l_inv = scipy.linalg.solve_triangular(inner_chol, np.diag(root), lower=True)
        cond = np.inf
    cov_diag = np.sum(np.abs(l_inv) ** 2, axis=0)
    cov = l_inv.conj().T @ l_inv if full_cov else None
    bad = cond > CONDITION_LIMIT
    if bad:
        warnings.warn(
            f"posterior precision condition estimate {cond:.3g} exceeds {CONDITION_LIMIT:g}",
            NumericalConditioningWarning,
            stacklevel=2,
        )
    return PosteriorExact(mean, cov_diag, full_cov, cov, cond, bad)


def _fixed_point_cache(prior, nu_star):
    nu_star = check_real_vector(nu_star, prior.dim, "nu_star")
    if np.any(nu_star >= 0):
        raise InvalidArgumentError("nu_star must be strictly negative")
    lam = 1.0 / (1.0 / prior.variances - nu_star)
    beta = prior.virtual_noise_var + float(np.sum(lam))
    return lam, beta


def eiga_fixed_point_mu(op, prior, y, nu_star):
    """Closed-form EIGA fixed-point mean for a given second-order fixed point.

    Evaluates ``D [A^H A (D - Lam/N) + beta I]^-1 A^H y``. Writing
    ``K = D - Lam/N`` (positive diagonal), this is
    ``D K^-1 (A^H A + beta K^-1)^-1 A^H y`` with a Hermitian positive
    definite system, solved by Cholesky.
    """
    a = _dense(op)
    y = check_complex_vector(getattr(y, "y", y), op.n_rows, "y")
    lam, beta = _fixed_point_cache(prior, nu_star)
    n = op.n_rows
    k_diag = prior.variances - lam / n
    if np.any(k_diag <= 0):
        raise InvalidArgumentError("D - Lam/N must be positive; nu_star is not a fixed point")
    system = a.conj().T @ a
    system[np.diag_indices_from(system)] += beta / k_diag
    sol = scipy.linalg.cho_solve(scipy.linalg.cho_factor(system, lower=True), a.conj().T @ y)
    return prior.variances / k_diag * sol


def nu_map(nu, prior, n_obs):
    """Undamped second-order map ``g(nu) = -(N-1) / (beta - lam)``."""
    lam = 1.0 / (1.0 / prior.variances - nu)
    beta = prior.virtual_noise_var + np.sum(lam)
    return -(n_obs - 1) / (beta - lam)


def solve_nu_fixed_point(prior, n_obs, tol=1e-13, max_iter=1_000_000):
    """Second-order fixed point by undamped iteration from zero.

    The iterates decrease monotonically and are bounded below, so the
    sequence converges. Stops when ``|nu - g(nu)|_inf <= tol (1 + |nu|_inf)``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` is exhausted; ``.last`` holds the last iterate.
    """
    n_obs = check_positive_int(n_obs, "n_obs", minimum=2)
    tol = check_positive_float(tol, "tol")
    nu = np.zeros(prior.dim)
    for _ in range(max_iter):
        nxt = nu_map(nu, prior, n_obs)
        if np.max(np.abs(nxt - nu)) <= tol * (1.0 + np.max(np.abs(nxt))):
            return nxt
        nu = nxt
    raise ConvergenceError("second-order fixed point iteration did not converge", last=nu)


def condition_gaussian(prior, gamma_n, y_n, np_n, noise_var=None):
    """Exact moments of the Gaussian with one observation folded in.

    The Gaussian has precision ``D^-1 - Diag(nu_n) + gamma gamma^H / s`` and
    mean ``Sigma (y_n gamma / s + theta_n / 2)``. The covariance is formed
    densely by the Sherman-Morrison update of ``Lam = (D^-1 - Diag nu_n)^-1``.
    """
    gamma = check_complex_vector(gamma_n, prior.dim, "gamma_n")
    s = prior.noise_var if noise_var is None else check_positive_float(noise_var, "noise_var")
    if np.any(np_n.nu > 0):
        raise InvalidArgumentError("nu_n must be nonpositive")
    lam = np.diag(1.0 / (1.0 / prior.variances - np_n.nu))
    lam_g = lam @ gamma
    cov = lam - np.outer(lam_g, lam_g.conj()) / (s + np.real(gamma.conj() @ lam_g))
    mean = cov @ (complex(y_n) * gamma / s + 0.5 * np_n.theta)
    return GaussianBelief(mean, np.real(np.diag(cov)).copy())
