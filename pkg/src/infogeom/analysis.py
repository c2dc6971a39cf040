"""Convergence and fixed-point diagnostics for EIGA.

At the second-order fixed point ``nu*`` the first-order update is an affine
map ``theta -> Bt theta + b`` with ``Bt = d B + (1 - d) I``. This module
builds ``Bt`` densely, computes its spectrum through a Hermitian similarity
transform, checks the fixed-point conditions of a finished run, and probes
how the fixed-point mean approaches the MMSE mean as ``N`` grows.
"""

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .eiga import virtual_noise
from .exceptions import InvalidArgumentError
from .model import PriorModel, observe, sample_channel
from .operators import DenseOperator, spectral_radius_centered
from .oracle import eiga_fixed_point_mu, mmse, solve_nu_fixed_point
from .rng import derive_seed
from .validation import check_complex_vector, check_damping, check_real_vector

ITERATION_MATRIX_GUARD = 2048


@dataclass(frozen=True, eq=False)
class IterationMatrix:
    """Dense ``Bt`` together with the diagonal that symmetrizes it.

    Attributes
    ----------
    matrix : ndarray of complex, shape (M, M)
        ``d B + (1 - d) I``.
    similarity : ndarray of float, shape (M,)
        Positive ``k`` such that ``Diag(k)^-1 B Diag(k)`` is Hermitian at the
        fixed point.
    damping : float
    """

    matrix: np.ndarray
    similarity: np.ndarray
    damping: float

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _fixed_point_quantities(prior, nu_star):
    nu_star = check_real_vector(nu_star, prior.dim, "nu_star")
    if np.any(nu_star >= 0):
        raise InvalidArgumentError("nu_star must be strictly negative")
    lam = 1.0 / (1.0 / prior.variances - nu_star)
    beta = prior.virtual_noise_var + float(np.sum(lam))
    return lam, beta


def iteration_matrix(op, prior, nu_star, damping):
    """Dense first-order iteration matrix at ``nu_star``.

    ``B = (N-1)/beta (I - Lam/beta)^-1 (I - A^H A / N) Lam`` and
    ``Bt = d B + (1 - d) I``.
    """
    if op.n_cols > ITERATION_MATRIX_GUARD:
        raise InvalidArgumentError(f"iteration matrix needs M <= {ITERATION_MATRIX_GUARD}")
    damping = check_damping(damping, allow_zero=True)
    lam, beta = _fixed_point_quantities(prior, nu_star)
    n, m = op.shape
    a = op.to_dense()
    inner = np.eye(m) - a.conj().T @ a / n
    left = (n - 1) / beta / (1.0 - lam / beta)
    b = left[:, None] * inner * lam[None, :]
    btilde = damping * b + (1.0 - damping) * np.eye(m)
    # B = C (N I - A^H A) E with C = 1 - Lam/(N D), E = Lam/beta
    c = 1.0 - lam / (n * prior.variances)
    e = lam / beta
    return IterationMatrix(btilde, np.sqrt(c / e), damping)


def eigs_of_iteration_matrix(im):
    """Real spectrum of ``Bt`` via its Hermitian similar form.

    Parameters
    ----------
    im : IterationMatrix

    Returns
    -------
    eigenvalues : ndarray of float
        Sorted ascending.
    max_imag : float
        Largest imaginary part from a direct non-symmetric eigensolve,
        reported as an independent realness check.
    """
    k = im.similarity
    q = im.matrix * (k[None, :] / k[:, None])
    q = 0.5 * (q + q.conj().T)
    eigenvalues = np.linalg.eigvalsh(q)
    direct = np.linalg.eigvals(im.matrix)
    return eigenvalues, float(np.max(np.abs(direct.imag)))


@dataclass(frozen=True)
class ConvergenceReport:
    """Spectral summary of the EIGA first-order iteration."""

    rho_centered: float
    damping_bound_general: float
    eig_B_min: float
    eig_B_max: float
    eig_Btilde_max: float
    spectral_radius_Btilde: float
    max_imag_part: float
    predicted_convergent: bool
    damping: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())


def convergence_report(op, prior, damping, nu_star=None):
    """Build a :class:`ConvergenceReport` for ``op`` at damping ``damping``."""
    if nu_star is None:
        nu_star = solve_nu_fixed_point(prior, op.n_rows)
    rho = spectral_radius_centered(op, "exact")
    im_b = iteration_matrix(op, prior, nu_star, 1.0)
    eig_b, max_imag = eigs_of_iteration_matrix(im_b)
    eig_bt = damping * eig_b + (1.0 - damping)
    return ConvergenceReport(
        rho_centered=rho,
        damping_bound_general=2.0 / (1.0 + rho / op.n_rows),
        eig_B_min=float(eig_b[0]),
        eig_B_max=float(eig_b[-1]),
        eig_Btilde_max=float(eig_bt[-1]),
        spectral_radius_Btilde=float(np.max(np.abs(eig_bt))),
        max_imag_part=max_imag,
        predicted_convergent=bool(np.max(np.abs(eig_bt)) < 1.0),
        damping=float(damping),
    )


@dataclass(frozen=True)
class FixedPointResiduals:
    e_condition: float
    m_condition_mean: float
    m_condition_var: float

    def to_dict(self):
        return asdict(self)


def fixed_point_residuals(result, op, y, prior):
    """Check the fixed-point conditions of an EIGA run.

    The auxiliary Gaussian of observation ``n`` at the common parameter has
    ``Sigma_n = Lam - Lam g g^H Lam / beta_n`` and
    ``mu_n = Sigma_n (y_n g / s + theta / 2)``, with ``g = gamma_n`` and the
    virtual noise ``s``. All ``N`` of them are evaluated matrix-free.

    Returns
    -------
    FixedPointResiduals
        ``e_condition``: ``|theta_0 - N/(N-1) theta|`` and likewise for
        ``nu`` (inf-norm). ``m_condition_mean``: distance from ``mu_0`` to
        the average of the ``mu_n``, relative to ``1 + |mu_0|``.
        ``m_condition_var``: largest distance between ``diag Sigma_0`` and
        any ``diag Sigma_n``.
    """
    y = check_complex_vector(getattr(y, "y", y), op.n_rows, "y")
    n = op.n_rows
    common, objective = result.common_np, result.objective_np
    scale = n / (n - 1)
    e_cond = max(
        float(np.max(np.abs(objective.theta - scale * common.theta))),
        float(np.max(np.abs(objective.nu - scale * common.nu))),
    )
    theta = common.theta
    lam = 1.0 / (1.0 / prior.variances - common.nu)
    s = prior.virtual_noise_var
    weights = op.gram_diag_weights()
    if weights is None:
        row_mass = np.full(n, np.sum(lam))
    else:
        row_mass = weights @ lam
    beta_n = s + row_mass
    # gamma_n^H Lam v_n with v_n = y_n gamma_n / s + theta / 2
    coeff = (y * row_mass / s + 0.5 * op.apply(lam * theta)) / beta_n
    mean_avg = (lam * (op.adjoint_apply(y) / s + 0.5 * n * theta) - lam * op.adjoint_apply(coeff)) / n
    mu_0 = result.belief.mean
    m_mean = float(np.max(np.abs(mu_0 - mean_avg)) / (1.0 + np.max(np.abs(mu_0))))
    if weights is None:
        var_n = lam[None, :] - lam[None, :] ** 2 / beta_n[0]
    else:
        var_n = lam[None, :] - (lam**2)[None, :] * weights / beta_n[:, None]
    m_var = float(np.max(np.abs(var_n - result.belief.var[None, :])))
    return FixedPointResiduals(e_cond, m_mean, m_var)


@dataclass(frozen=True)
class ProbeRow:
    """One size of :func:`fixed_point_gap_probe`, averaged over seeds."""

    n_vars: int
    n_obs: int
    rel_error: float
    max_lambda: float
    lambda_bound: float
    f_gap: float
    seeds: int


def log_uniform_prior(n_vars, seed):
    """Default prior family: log-uniform variances on [0.1, 10], mean one."""
    from .rng import STREAM_PROBE, make_rng

    rng = make_rng(seed, STREAM_PROBE)
    v = np.exp(rng.uniform(np.log(0.1), np.log(10.0), n_vars))
    return v / v.mean()


def fixed_point_gap_probe(prior_family, sizes, noise_var, seeds, calibrate=True, base_seed=0):
    """Tabulate how close the EIGA fixed point gets to MMSE as ``N`` grows.

    For each ``(M, N)`` and seed: draw prior variances from
    ``prior_family(M, seed)``, a random unit-magnitude ``A``, a channel and
    an observation; then compare the closed-form fixed-point mean with the
    exact MMSE mean.

    Parameters
    ----------
    prior_family : callable or None
        ``(M, seed) -> variances``; ``None`` uses :func:`log_uniform_prior`.
    sizes : sequence of (int, int)
        ``(M, N)`` pairs with ``M < N``.
    noise_var : float
    seeds : int or sequence of int
        Number of seeds, or the seeds themselves.
    calibrate : bool, default=True
        Use the calibrated virtual noise (else the true noise variance).

    Returns
    -------
    list of ProbeRow
        Columns: mean relative error ``|mu_0* - mu|/|mu|``, mean of
        ``max_i Lam*_ii``, mean of the bound ``(s + tr D)/(N-1)`` and mean
        of ``|f(beta*) - s|`` where ``s`` is the virtual noise.
    """
    family = log_uniform_prior if prior_family is None else prior_family
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    rows = []
    for m, n in sizes:
        if m >= n:
            raise InvalidArgumentError(f"probe needs M < N, got ({m}, {n})")
        errs, lams, bounds, gaps = [], [], [], []
        for seed in seed_list:
            child = derive_seed(base_seed, m, n, seed)
            variances = np.asarray(family(m, child), float)
            virtual = virtual_noise(noise_var, variances, n) if calibrate else noise_var
            prior = PriorModel(variances, noise_var, virtual)
            op = DenseOperator.random_unit(n, m, child)
            h = sample_channel(prior, child)
            y = observe(op, h, noise_var, child)
            nu_star = solve_nu_fixed_point(prior, n)
            mu_fp = eiga_fixed_point_mu(op, prior, y, nu_star)
            mu_ref = mmse(op, prior, y).mean
            lam = 1.0 / (1.0 / variances - nu_star)
            beta = virtual + lam.sum()
            errs.append(np.linalg.norm(mu_fp - mu_ref) / np.linalg.norm(mu_ref))
            lams.append(lam.max())
            bounds.append((virtual + variances.sum()) / (n - 1))
            gaps.append(abs(virtual_noise(beta, variances, n) - virtual))
        rows.append(ProbeRow(m, n, float(np.mean(errs)), float(np.mean(lams)),
                             float(np.mean(bounds)), float(np.mean(gaps)), len(seed_list)))
    return rows


PROBE_COLUMNS = ("n_vars", "n_obs", "rel_error", "max_lambda", "lambda_bound", "f_gap", "seeds")


def write_probe_csv(rows, path):
    """Write :func:`fixed_point_gap_probe` rows as CSV."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBE_COLUMNS)
        for row in rows:
            writer.writerow([repr(getattr(row, c)) for c in PROBE_COLUMNS])


theorem9_probe = fixed_point_gap_probe
