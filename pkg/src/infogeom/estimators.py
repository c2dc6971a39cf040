"""scikit-learn style wrappers around the three estimators.

Each estimator is configured with a measurement operator and a prior. In the
linear-Gaussian model the posterior variances (and, for EIGA, the whole
second-order fixed point) do not depend on the data, so ``fit`` computes
them once. ``predict`` maps a batch of observation vectors, one per row, to
posterior means, one per row.

Examples
--------
>>> est = EIGAEstimator(operator=op, prior_variances=d, noise_var=0.1)
>>> est.fit().predict(Y)            # doctest: +SKIP
"""

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .eiga import eiga_run, virtual_noise
from .exceptions import InvalidArgumentError
from .harness import nmse
from .iga import iga_run
from .model import PriorModel
from .oracle import mmse, posterior_precision, solve_nu_fixed_point
from .validation import check_complex_vector, check_positive_float, check_real_vector


def check_observations(Y, n_obs):
    """Return ``Y`` as a 2-D complex array of shape (n_samples, n_obs).

    A single 1-D observation vector is promoted to one row.
    """
    arr = np.asarray(Y)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"observations must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] != n_obs:
        raise InvalidArgumentError(f"observations must have {n_obs} columns, got {arr.shape[1]}")
    return np.vstack([check_complex_vector(row, n_obs, "y") for row in arr])


class _PosteriorMeanEstimator(BaseEstimator):
    """Shared parameter handling and scoring."""

    def __init__(self, operator=None, prior_variances=None, noise_var=1.0):
        self.operator = operator
        self.prior_variances = prior_variances
        self.noise_var = noise_var

    def _build_prior(self, virtual_noise_var=None):
        if self.operator is None:
            raise InvalidArgumentError("operator must be set")
        variances = check_real_vector(self.prior_variances, self.operator.n_cols,
                                      "prior_variances", positive=True)
        noise_var = check_positive_float(self.noise_var, "noise_var")
        return PriorModel(variances, noise_var, virtual_noise_var)

    def _check_fitted(self):
        if not hasattr(self, "prior_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit first")

    def fit(self, Y=None, H=None):
        """Validate parameters and precompute data-independent quantities.

        Parameters
        ----------
        Y : array_like, optional
            Ignored apart from a shape check; accepted for pipeline use.
        H : ignored

        Returns
        -------
        self
        """
        prior = self._make_prior()
        if Y is not None:
            check_observations(Y, self.operator.n_rows)
        self.prior_ = prior
        self.n_features_in_ = self.operator.n_rows
        self._fit_prepared()
        return self

    def _make_prior(self):
        return self._build_prior()

    def _fit_prepared(self):
        pass

    def predict(self, Y):
        """Posterior means, one row per observation row.

        Parameters
        ----------
        Y : array_like of shape (n_samples, N) or (N,)

        Returns
        -------
        ndarray of complex, shape (n_samples, M)
        """
        self._check_fitted()
        Y = check_observations(Y, self.n_features_in_)
        return np.vstack([self._predict_one(y) for y in Y])

    def fit_predict(self, Y, H=None):
        return self.fit(Y).predict(Y)

    def score(self, Y, H):
        """Negative NMSE in dB of the predicted means against truths ``H``."""
        pred = self.predict(Y)
        H = np.atleast_2d(np.asarray(H, complex))
        return -nmse(list(pred), list(H))


class MMSEEstimator(_PosteriorMeanEstimator):
    """Exact posterior mean via a Cholesky factorization computed in ``fit``.

    Attributes
    ----------
    prior_ : PriorModel
    var_ : ndarray of shape (M,)
        Exact posterior marginal variances.
    """

    def _fit_prepared(self):
        a = self.operator.to_dense()
        prec = posterior_precision(a, self.prior_.variances, self.prior_.noise_var)
        self._chol = scipy.linalg.cho_factor(prec, lower=True)
        self._adjoint = a.conj().T / self.prior_.noise_var
        self.var_ = np.real(np.diag(scipy.linalg.cho_solve(self._chol, np.eye(a.shape[1]))))

    def _predict_one(self, y):
        return scipy.linalg.cho_solve(self._chol, self._adjoint @ y)

    def posterior(self, y):
        """Full :class:`~infogeom.oracle.PosteriorExact` for one observation."""
        self._check_fitted()
        return mmse(self.operator, self.prior_, y)


class EIGAEstimator(_PosteriorMeanEstimator):
    """Efficient information geometry approach.

    Parameters
    ----------
    operator : MeasurementOperator
    prior_variances : array_like of shape (M,)
    noise_var : float
    virtual_noise : {"calibrated", "exact"} or float, default="calibrated"
        ``"calibrated"`` uses ``f(noise_var)`` (needs ``M < N``), ``"exact"``
        the true noise variance, a float sets it directly.
    damping : float, optional
        Defaults to 0.9 times the largest sufficient bound.
    max_iter : int, default=2000
    tol : float, default=1e-8

    Attributes
    ----------
    prior_ : PriorModel
    nu_star_ : ndarray of shape (M,)
        Second-order fixed point of the common parameter.
    var_ : ndarray of shape (M,)
        Output marginal variances at the fixed point.
    n_iter_ : list of int
        Iterations used by each row of the last ``predict`` call.
    converged_ : list of bool
    """

    def __init__(self, operator=None, prior_variances=None, noise_var=1.0,
                 virtual_noise="calibrated", damping=None, max_iter=2000, tol=1e-8):
        super().__init__(operator, prior_variances, noise_var)
        self.virtual_noise = virtual_noise
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol

    def _make_prior(self):
        base = self._build_prior()
        if self.virtual_noise == "calibrated":
            virtual = virtual_noise(base.noise_var, base.variances, self.operator.n_rows)
        elif self.virtual_noise == "exact":
            virtual = base.noise_var
        else:
            virtual = check_positive_float(self.virtual_noise, "virtual_noise")
        return base.with_noise(base.noise_var, virtual)

    def _fit_prepared(self):
        n = self.operator.n_rows
        self.nu_star_ = solve_nu_fixed_point(self.prior_, n)
        self.var_ = 1.0 / (1.0 / self.prior_.variances - n / (n - 1) * self.nu_star_)
        self.n_iter_ = []
        self.converged_ = []

    def predict(self, Y):
        self.n_iter_, self.converged_ = [], []
        return super().predict(Y)

    def _predict_one(self, y):
        res = eiga_run(self.operator, y, self.prior_, self.damping, self.max_iter, self.tol)
        self.n_iter_.append(res.iterations)
        self.converged_.append(res.converged)
        return res.belief.mean


class IGAEstimator(_PosteriorMeanEstimator):
    """Reference information geometry approach (dense, ``O(NM)`` per step).

    Parameters
    ----------
    operator : MeasurementOperator
    prior_variances : array_like of shape (M,)
    noise_var : float
    damping : float, default=0.2
    max_iter : int, default=2000
    tol : float, default=1e-10

    Attributes
    ----------
    prior_ : PriorModel
    n_iter_ : list of int
    converged_ : list of bool
    """

    def __init__(self, operator=None, prior_variances=None, noise_var=1.0,
                 damping=0.2, max_iter=2000, tol=1e-10):
        super().__init__(operator, prior_variances, noise_var)
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol

    def _fit_prepared(self):
        self.n_iter_ = []
        self.converged_ = []

    def predict(self, Y):
        self.n_iter_, self.converged_ = [], []
        return super().predict(Y)

    def _predict_one(self, y):
        res = iga_run(self.operator, y, self.prior_, self.damping, self.max_iter, self.tol)
        self.n_iter_.append(res.state.t)
        self.converged_.append(res.converged)
        return res.belief.mean
