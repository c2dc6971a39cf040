"""Linear-Gaussian problem construction.

The estimation problem is ``y = A h + z`` with ``h ~ CN(0, D)``, ``D``
diagonal and ``z ~ CN(0, noise_var I)``. This module builds sparse power
vectors, extracts the nonzero-variance variables into a :class:`PriorModel`,
and samples channels and observations.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError
from .rng import STREAM_CHANNEL, STREAM_NOISE, STREAM_POWER, complex_normal, make_rng
from .validation import (
    check_complex_vector,
    check_positive_float,
    check_positive_int,
    check_real_vector,
    complex_to_pairs,
    pairs_to_complex,
)

# log-uniform range of synthetic cluster powers, before normalization
POWER_RANGE = (0.1, 10.0)


@dataclass(frozen=True, eq=False)
class PowerSpec:
    """Per-variable variances on the pre-extraction grid.

    Parameters
    ----------
    full_dim : int
        Length of the pre-extraction vector.
    powers : ndarray of shape (full_dim,)
        Nonnegative variances; at least one is positive.
    cluster_seed : int
        Seed that generated the support and values.
    """

    full_dim: int
    powers: np.ndarray
    cluster_seed: int = 0

    def __post_init__(self):
        full_dim = check_positive_int(self.full_dim, "full_dim")
        powers = check_real_vector(self.powers, full_dim, "powers")
        if np.any(powers < 0):
            raise InvalidArgumentError("powers must be nonnegative")
        if not np.any(powers > 0):
            raise InvalidArgumentError("powers must contain at least one positive entry")
        powers = powers.copy()
        powers.flags.writeable = False
        object.__setattr__(self, "full_dim", full_dim)
        object.__setattr__(self, "powers", powers)

    @property
    def support(self):
        """Indices of the positive entries, increasing."""
        return np.flatnonzero(self.powers > 0)

    @property
    def nonzero_count(self):
        return int(np.count_nonzero(self.powers))

    def to_dict(self):
        return {
            "full_dim": self.full_dim,
            "powers": [float(p) for p in self.powers],
            "cluster_seed": int(self.cluster_seed),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["full_dim"]), np.asarray(data["powers"], float), int(data["cluster_seed"]))


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Diagonal Gaussian prior plus the two noise levels.

    Parameters
    ----------
    variances : ndarray of shape (M,)
        Diagonal of the prior covariance ``D``; strictly positive.
    noise_var : float
        True noise variance.
    virtual_noise_var : float, optional
        Noise variance used inside EIGA; defaults to ``noise_var``. Must lie
        in ``(0, noise_var]``.
    """

    variances: np.ndarray
    noise_var: float
    virtual_noise_var: float = field(default=None)

    def __post_init__(self):
        variances = check_real_vector(self.variances, name="variances", positive=True)
        if variances.size == 0:
            raise InvalidArgumentError("variances must be nonempty")
        variances = variances.copy()
        variances.flags.writeable = False
        noise_var = check_positive_float(self.noise_var, "noise_var")
        virtual = noise_var if self.virtual_noise_var is None else self.virtual_noise_var
        virtual = check_positive_float(virtual, "virtual_noise_var")
        if virtual > noise_var * (1 + 1e-12):
            raise InvalidArgumentError("virtual_noise_var must not exceed noise_var")
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "noise_var", noise_var)
        object.__setattr__(self, "virtual_noise_var", virtual)

    @property
    def dim(self):
        return int(self.variances.shape[0])

    def with_noise(self, noise_var, virtual_noise_var=None):
        """Return a copy with different noise levels."""
        return PriorModel(self.variances, noise_var, virtual_noise_var)

    def to_dict(self):
        return {
            "dim": self.dim,
            "variances": [float(v) for v in self.variances],
            "noise_var": self.noise_var,
            "virtual_noise_var": self.virtual_noise_var,
        }

    @classmethod
    def from_dict(cls, data):
        prior = cls(np.asarray(data["variances"], float), data["noise_var"], data["virtual_noise_var"])
        if "dim" in data and int(data["dim"]) != prior.dim:
            raise InvalidArgumentError("dim does not match the variances length")
        return prior


@dataclass(frozen=True, eq=False)
class Observation:
    """A noisy measurement vector ``y`` of length ``n_obs``."""

    y: np.ndarray

    def __post_init__(self):
        y = check_complex_vector(self.y, name="y").copy()
        y.flags.writeable = False
        object.__setattr__(self, "y", y)

    @property
    def n_obs(self):
        return int(self.y.shape[0])

    def to_dict(self):
        return {"n_obs": self.n_obs, "y": complex_to_pairs(self.y)}

    @classmethod
    def from_dict(cls, data):
        return cls(pairs_to_complex(data["y"]))


def _cluster_starts(rng, full_dim, n_clusters, width):
    """Random non-overlapping cluster starts, separated by a gap when possible."""
    spacer = 1 if n_clusters * width + (n_clusters - 1) <= full_dim else 0
    free = full_dim - n_clusters * width - spacer * (n_clusters - 1)
    # random composition of `free` into n_clusters + 1 nonnegative gaps
    cuts = np.sort(rng.choice(free + n_clusters, size=n_clusters, replace=False))
    gaps = np.diff(np.concatenate(([-1], cuts))) - 1
    starts = []
    pos = 0
    for k, gap in enumerate(gaps):
        pos += int(gap) + (spacer if k > 0 else 0)
        starts.append(pos)
        pos += width
    return starts


def generate_power_spec(full_dim, n_clusters, cluster_width, seed):
    """Draw a clustered sparse power vector.

    ``n_clusters`` contiguous runs of length ``cluster_width`` are placed at
    random without overlap; when there is room, neighbouring runs are kept at
    least one zero apart so the runs stay distinguishable. Powers inside the
    runs are log-uniform on ``POWER_RANGE`` and rescaled to mean one.

    Parameters
    ----------
    full_dim : int
    n_clusters : int
    cluster_width : int
    seed : int

    Returns
    -------
    PowerSpec

    Raises
    ------
    InvalidArgumentError
        If the clusters do not fit in ``full_dim``.
    """
    full_dim = check_positive_int(full_dim, "full_dim")
    n_clusters = check_positive_int(n_clusters, "n_clusters")
    cluster_width = check_positive_int(cluster_width, "cluster_width")
    if n_clusters * cluster_width > full_dim:
        raise InvalidArgumentError(
            f"{n_clusters} clusters of width {cluster_width} do not fit in {full_dim}"
        )
    rng = make_rng(seed, STREAM_POWER)
    starts = _cluster_starts(rng, full_dim, n_clusters, cluster_width)
    powers = np.zeros(full_dim)
    lo, hi = np.log(POWER_RANGE[0]), np.log(POWER_RANGE[1])
    for s in starts:
        powers[s:s + cluster_width] = np.exp(rng.uniform(lo, hi, cluster_width))
    powers[powers > 0] /= powers[powers > 0].mean()
    return PowerSpec(full_dim, powers, seed)


def build_prior(spec, noise_var, n_obs, calibrate_virtual_noise=False):
    """Extract the positive-variance variables of ``spec`` into a prior.

    Parameters
    ----------
    spec : PowerSpec
    noise_var : float
        True noise variance.
    n_obs : int
        Number of observations ``N``; needed for the virtual noise.
    calibrate_virtual_noise : bool, default=False
        If true, set the virtual noise variance to the calibrated value
        (see :func:`infogeom.eiga.virtual_noise`), which requires ``M < N``.

    Returns
    -------
    prior : PriorModel
    extraction_indices : ndarray of int64
        Positions of the positive powers, increasing.

    Raises
    ------
    UnsupportedConfigurationError
        When calibration is requested with ``M >= N``.
    """
    from .eiga import virtual_noise

    if not isinstance(spec, PowerSpec):
        spec = PowerSpec(len(spec), np.asarray(spec, float))
    noise_var = check_positive_float(noise_var, "noise_var")
    n_obs = check_positive_int(n_obs, "n_obs")
    idx = spec.support
    variances = spec.powers[idx]
    virtual = noise_var
    if calibrate_virtual_noise:
        virtual = virtual_noise(noise_var, variances, n_obs)
    return PriorModel(variances, noise_var, virtual), idx


def sample_channel(prior, seed):
    """Draw ``h ~ CN(0, D)`` deterministically from ``seed``."""
    rng = make_rng(seed, STREAM_CHANNEL)
    return complex_normal(rng, prior.dim, prior.variances)


def observe(op, h, noise_var, seed):
    """Synthesize ``y = A h + z`` with ``z ~ CN(0, noise_var I)``.

    Parameters
    ----------
    op : DenseOperator or StructuredOperator
    h : array_like of shape (op.n_cols,)
    noise_var : float
    seed : int

    Returns
    -------
    Observation
    """
    h = check_complex_vector(h, op.n_cols, "h")
    noise_var = check_positive_float(noise_var, "noise_var")
    rng = make_rng(seed, STREAM_NOISE)
    z = complex_normal(rng, op.n_rows, noise_var)
    return Observation(op.apply(h) + z)
