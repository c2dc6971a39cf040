"""Measurement operators ``A`` with forward and adjoint products.

Two concrete operators are provided:

* :class:`DenseOperator` wraps an explicit complex matrix.
* :class:`StructuredOperator` is the column-extracted Kronecker product
  ``F_d kron V_v kron V_h`` of three partial DFT matrices. Its products cost a
  few FFTs instead of a dense matvec, and :meth:`StructuredOperator.to_dense`
  rebuilds the matrix directly from the steering-vector definitions so the
  two routes can certify each other.

Index conventions for the structured operator
---------------------------------------------
The pre-extraction coefficient vector is the column-major vectorization of
an ``(F_v N_rv F_h N_rh) x (F_tau N_p)`` beam-delay matrix, i.e. the entry
for delay bin ``m``, vertical beam ``iv`` and horizontal beam ``ih`` sits at
``m * (N_v N_h) + iv * N_h + ih``. The observation index of subcarrier ``p``
and antenna ``(a, b)`` is ``p * N_r + a * N_rh + b``.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .exceptions import ConvergenceError, InvalidArgumentError
from .rng import STREAM_OPERATOR, complex_normal, make_rng
from .validation import (
    check_complex_matrix,
    check_complex_vector,
    check_index_list,
    check_positive_int,
)

# materialization guard for exact eigensolves and dense oracles
DENSE_GUARD = 4096
# largest N*M for which "auto" picks the exact spectral radius
_AUTO_EXACT_ENTRIES = 1 << 22

_MAGIC = int.from_bytes(b"IGEODNS1", "little")
_FORMAT_VERSION = 1
_FLAG_UNIT_MAGNITUDE = 1


class MeasurementOperator:
    """Common interface: ``apply``, ``adjoint_apply``, ``row``, ``to_dense``."""

    n_rows: int
    n_cols: int
    unit_magnitude: bool

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def apply(self, x):
        raise NotImplementedError

    def adjoint_apply(self, s):
        raise NotImplementedError

    def row(self, n):
        raise NotImplementedError

    def to_dense(self):
        raise NotImplementedError

    def gram_diag_weights(self):
        """Return ``|A|**2`` as an (N, M) array, or None for unit magnitude.

        Used where per-row quantities ``sum_i |a_ni|**2 w_i`` are needed.
        """
        if self.unit_magnitude:
            return None
        return np.abs(self.to_dense()) ** 2

    def _check_row_index(self, n):
        if isinstance(n, (bool, np.bool_)) or not isinstance(n, (int, np.integer)):
            raise InvalidArgumentError(f"row index must be an integer, got {n!r}")
        if not 0 <= n < self.n_rows:
            raise InvalidArgumentError(f"row index {n} out of range [0, {self.n_rows})")
        return int(n)


class DenseOperator(MeasurementOperator):
    """Explicit complex ``N x M`` matrix.

    Parameters
    ----------
    entries : array_like of shape (N, M)
    constant_magnitude : bool, optional
        If True, every entry must have modulus one (to 1e-12). If None the
        flag is detected from the entries.
    """

    def __init__(self, entries, constant_magnitude=None):
        entries = check_complex_matrix(entries, "entries").copy()
        entries.flags.writeable = False
        is_unit = bool(np.all(np.abs(np.abs(entries) - 1.0) <= 1e-12))
        if constant_magnitude and not is_unit:
            raise InvalidArgumentError("entries are not all of unit magnitude")
        self.entries = entries
        self.n_rows, self.n_cols = entries.shape
        self.unit_magnitude = is_unit if constant_magnitude is None else bool(constant_magnitude)

    def apply(self, x):
        x = check_complex_vector(x, self.n_cols, "x")
        return self.entries @ x

    def adjoint_apply(self, s):
        s = check_complex_vector(s, self.n_rows, "s")
        return self.entries.conj().T @ s

    def row(self, n):
        """Return ``gamma_n``, the conjugate of row ``n`` of ``A``."""
        return self.entries[self._check_row_index(n)].conj()

    def to_dense(self):
        return np.array(self.entries)

    @classmethod
    def random_unit(cls, n_rows, n_cols, seed):
        """Random i.i.d. uniform phases, ``a_ij = exp(j phi_ij)``."""
        n_rows = check_positive_int(n_rows, "n_rows")
        n_cols = check_positive_int(n_cols, "n_cols")
        rng = make_rng(seed, STREAM_OPERATOR)
        phases = rng.uniform(0.0, 2 * np.pi, size=(n_rows, n_cols))
        return cls(np.exp(1j * phases), constant_magnitude=True)

    def save(self, path):
        """Write the matrix in the package's binary format.

        Layout: eight little-endian int64 header words (magic, version, N, M,
        flags, three reserved zeros) followed by the entries in column-major
        order as little-endian complex128.
        """
        path = Path(path)
        flags = _FLAG_UNIT_MAGNITUDE if self.unit_magnitude else 0
        header = struct.pack("<8q", _MAGIC, _FORMAT_VERSION, self.n_rows, self.n_cols, flags, 0, 0, 0)
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(np.asfortranarray(self.entries).astype("<c16").tobytes(order="F"))
        except OSError as exc:
            raise OSError(f"cannot write operator to {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        """Read a matrix written by :meth:`save`."""
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < 64:
            raise InvalidArgumentError(f"{path}: file too short for header")
        magic, version, n, m, flags, *_ = struct.unpack("<8q", raw[:64])
        if magic != _MAGIC:
            raise InvalidArgumentError(f"{path}: bad magic number")
        if version != _FORMAT_VERSION:
            raise InvalidArgumentError(f"{path}: unsupported format version {version}")
        if len(raw) != 64 + 16 * n * m:
            raise InvalidArgumentError(f"{path}: payload size does not match header")
        data = np.frombuffer(raw, dtype="<c16", offset=64).reshape((n, m), order="F")
        return cls(data.astype(np.complex128), constant_magnitude=bool(flags & _FLAG_UNIT_MAGNITUDE) or None)


def _check_fine_factors(fine_factors):
    if len(fine_factors) != 3:
        raise InvalidArgumentError("fine_factors must be a triple (F_v, F_h, F_tau)")
    return tuple(check_positive_int(f, "fine factor") for f in fine_factors)


def default_phase_shifts(k_users, n_p, f_tau):
    """Evenly spaced phase shifts ``n_k = k * floor(F_tau N_p / K)``."""
    k_users = check_positive_int(k_users, "k_users")
    span = (f_tau * n_p) // k_users
    if span == 0:
        raise InvalidArgumentError("more users than delay bins")
    return [k * span for k in range(k_users)]


class StructuredOperator(MeasurementOperator):
    """Column-extracted ``F_d kron V_v kron V_h`` with FFT products.

    Parameters
    ----------
    n_rv, n_rh : int
        Antennas per column and per row of the planar array.
    n_p : int
        Number of training subcarriers.
    fine_factors : tuple of int
        Oversampling factors ``(F_v, F_h, F_tau)``.
    phase_shifts : sequence of int
        Per-user phase shift in ``[0, F_tau N_p)``. The shifts only enter the
        operator through the extraction indices (a user's delay columns are
        cyclically offset by its shift), but are kept for bookkeeping.
    extraction_indices : sequence of int
        Strictly increasing pre-extraction columns kept in ``A``.
    """

    unit_magnitude = True

    def __init__(self, n_rv, n_rh, n_p, fine_factors, phase_shifts, extraction_indices):
        self.n_rv = check_positive_int(n_rv, "n_rv")
        self.n_rh = check_positive_int(n_rh, "n_rh")
        self.n_p = check_positive_int(n_p, "n_p")
        self.fine_factors = _check_fine_factors(fine_factors)
        f_v, f_h, f_tau = self.fine_factors
        self.n_v = f_v * self.n_rv
        self.n_h = f_h * self.n_rh
        self.n_delay = f_tau * self.n_p
        self.n_rows = self.n_rv * self.n_rh * self.n_p
        self.full_dim = self.n_delay * self.n_v * self.n_h
        shifts = [int(s) for s in phase_shifts]
        if not shifts:
            raise InvalidArgumentError("phase_shifts must be nonempty")
        for s in shifts:
            if not 0 <= s < self.n_delay:
                raise InvalidArgumentError(f"phase shift {s} outside [0, {self.n_delay})")
        self.phase_shifts = tuple(shifts)
        idx = check_index_list(extraction_indices, self.full_dim, "extraction_indices")
        idx.flags.writeable = False
        self.extraction_indices = idx
        self.n_cols = int(idx.size)
        self._grid = (self.n_delay, self.n_v, self.n_h)
        self._sign_v = (-1.0) ** np.arange(self.n_rv)
        self._sign_h = (-1.0) ** np.arange(self.n_rh)

    @property
    def k_users(self):
        return len(self.phase_shifts)

    # -- products -------------------------------------------------------
    def apply(self, x):
        x = check_complex_vector(x, self.n_cols, "x")
        full = np.zeros(self.full_dim, dtype=np.complex128)
        full[self.extraction_indices] = x
        u = full.reshape(self._grid)
        # forward DFT on each axis, keeping only the rows that exist
        u = scipy.fft.fft(u, axis=0)[: self.n_p]
        u = scipy.fft.fft(u, axis=1)[:, : self.n_rv]
        u = scipy.fft.fft(u, axis=2)[:, :, : self.n_rh]
        u = u * self._sign_v[None, :, None] * self._sign_h[None, None, :]
        return u.reshape(-1)

    def adjoint_apply(self, s):
        s = check_complex_vector(s, self.n_rows, "s")
        u = s.reshape(self.n_p, self.n_rv, self.n_rh)
        u = u * self._sign_v[None, :, None] * self._sign_h[None, None, :]
        # conjugate DFT = unscaled inverse FFT of the zero-padded input
        u = scipy.fft.ifft(u, n=self.n_h, axis=2, norm="forward")
        u = scipy.fft.ifft(u, n=self.n_v, axis=1, norm="forward")
        u = scipy.fft.ifft(u, n=self.n_delay, axis=0, norm="forward")
        return u.reshape(-1)[self.extraction_indices]

    # -- dense route ----------------------------------------------------
    def _factor_matrices(self):
        """Steering matrices built straight from their definitions."""
        f_d = np.exp(-2j * np.pi * np.outer(np.arange(self.n_p), np.arange(self.n_delay)) / self.n_delay)
        u_v = (2 * np.arange(self.n_v) - self.n_v) / self.n_v
        u_h = (2 * np.arange(self.n_h) - self.n_h) / self.n_h
        v_v = np.exp(-1j * np.pi * np.outer(np.arange(self.n_rv), u_v))
        v_h = np.exp(-1j * np.pi * np.outer(np.arange(self.n_rh), u_h))
        return f_d, v_v, v_h

    def _column_coords(self):
        return np.unravel_index(self.extraction_indices, self._grid)

    def to_dense(self):
        """Materialize ``A`` (only the extracted columns)."""
        f_d, v_v, v_h = self._factor_matrices()
        m, iv, ih = self._column_coords()
        cols = (
            f_d[:, m][:, None, None, :]
            * v_v[:, iv][None, :, None, :]
            * v_h[:, ih][None, None, :, :]
        )
        return cols.reshape(self.n_rows, self.n_cols)

    def row(self, n):
        """Return ``gamma_n``, the conjugate of row ``n`` of ``A``."""
        n = self._check_row_index(n)
        p, a, b = np.unravel_index(n, (self.n_p, self.n_rv, self.n_rh))
        f_d, v_v, v_h = self._factor_matrices()
        m, iv, ih = self._column_coords()
        return (f_d[p, m] * v_v[a, iv] * v_h[b, ih]).conj()

    # -- serialization --------------------------------------------------
    def to_dict(self):
        return {
            "n_rv": self.n_rv,
            "n_rh": self.n_rh,
            "n_p": self.n_p,
            "fine_factors": list(self.fine_factors),
            "phase_shifts": list(self.phase_shifts),
            "extraction_indices": [int(i) for i in self.extraction_indices],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["n_rv"],
            data["n_rh"],
            data["n_p"],
            tuple(data["fine_factors"]),
            data["phase_shifts"],
            data["extraction_indices"],
        )


def build_structured(n_rv, n_rh, n_p, fine_factors, phase_shifts, extraction_indices):
    """Construct a :class:`StructuredOperator` (validating all arguments)."""
    return StructuredOperator(n_rv, n_rh, n_p, fine_factors, phase_shifts, extraction_indices)


def aggregate_user_powers(user_powers, phase_shifts, n_rv, n_rh, n_p, fine_factors):
    """Combine per-user beam-delay power matrices into the shared layout.

    Parameters
    ----------
    user_powers : sequence of ndarray
        User ``k``'s powers as an array of shape ``(n_beams, span_k)`` with
        ``n_beams = F_v N_rv F_h N_rh`` and ``span_k <= F_tau N_p``.
    phase_shifts : sequence of int
        User ``k``'s delay column ``c`` lands on ``(c + n_k) mod (F_tau N_p)``.

    Returns
    -------
    ndarray of shape (F_v F_h F_tau N,)
        Aggregated pre-extraction power vector (overlaps add up).
    """
    f_v, f_h, f_tau = _check_fine_factors(fine_factors)
    n_beams = f_v * n_rv * f_h * n_rh
    n_delay = f_tau * n_p
    if len(user_powers) != len(phase_shifts):
        raise InvalidArgumentError("one phase shift per user is required")
    total = np.zeros((n_delay, n_beams))
    for omega, shift in zip(user_powers, phase_shifts):
        omega = np.asarray(omega, float)
        if omega.ndim != 2 or omega.shape[0] != n_beams or omega.shape[1] > n_delay:
            raise InvalidArgumentError(f"user power matrix has shape {omega.shape}")
        cols = (np.arange(omega.shape[1]) + int(shift)) % n_delay
        np.add.at(total, cols, omega.T)
    return total.reshape(-1)


# -- spectra and damping bounds -------------------------------------------

def _centered_matvec(op, x):
    return op.n_rows * x - op.adjoint_apply(op.apply(x))


def spectral_radius_centered(op, method="exact", tol=1e-6, max_iter=10_000, seed=0):
    """Spectral radius of ``N I - A^H A``.

    Parameters
    ----------
    op : MeasurementOperator
    method : {"exact", "power_iteration"}
        ``exact`` runs a Hermitian eigensolve on the materialized matrix
        (``M <= 4096``). ``power_iteration`` is matrix-free.
    tol : float
        Relative stopping tolerance of the power iteration.
    max_iter : int
        Iteration cap of the power iteration.
    seed : int
        Seed of the power-iteration start vector.

    Raises
    ------
    ConvergenceError
        If the power iteration does not settle; ``.last`` holds the estimate.
    """
    n = op.n_rows
    if method == "exact":
        if op.n_cols > DENSE_GUARD:
            raise InvalidArgumentError(f"exact method needs M <= {DENSE_GUARD}, got {op.n_cols}")
        a = op.to_dense()
        centered = n * np.eye(op.n_cols) - a.conj().T @ a
        eigs = np.linalg.eigvalsh(centered)
        return float(np.max(np.abs(eigs)))
    if method != "power_iteration":
        raise InvalidArgumentError(f"unknown method {method!r}")
    rng = make_rng(seed, STREAM_OPERATOR)
    x = complex_normal(rng, op.n_cols)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        cx = _centered_matvec(op, x)
        norm = float(np.linalg.norm(cx))
        if norm == 0.0:
            return 0.0
        # ||C x|| with unit x is the square root of the Rayleigh quotient of C^2
        if abs(norm - estimate) <= tol * norm:
            return norm
        estimate = norm
        x = cx / norm
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", last=estimate)


@dataclass(frozen=True)
class DampingBounds:
    """Sufficient upper bounds on the EIGA damping factor.

    Attributes
    ----------
    rho : float
        Spectral radius of ``N I - A^H A`` used for ``general``.
    general : float
        ``2 / (1 + rho / N)``; valid for any operator.
    worst_case : float
        ``2 / M``; sufficient for unit-magnitude operators only, and then
        never larger than ``general``.
    structured : float or None
        ``2 / (F_v F_h F_tau)`` for structured operators with phase shift
        pilots.
    multi_user : float or None
        ``2 / (K F_v F_h F_tau)`` for ``K`` users with general pilots; only
        present when ``k_users`` was given.
    """

    rho: float
    general: float
    worst_case: float
    structured: float = None
    multi_user: float = None

    def tightest(self):
        """Largest of the applicable bounds (each one alone is sufficient).

        ``worst_case`` is left out: it only holds for unit magnitude, where
        ``general`` already dominates it.
        """
        if self.structured is None:
            return self.general
        return max(self.general, self.structured)

    def to_dict(self):
        return {
            "rho": self.rho,
            "general": self.general,
            "worst_case": self.worst_case,
            "structured": self.structured,
            "multi_user": self.multi_user,
        }


def damping_bounds(op, k_users=None, method="auto", rho=None):
    """Collect the sufficient damping bounds that apply to ``op``.

    Parameters
    ----------
    op : MeasurementOperator
    k_users : int, optional
        Number of users for the multi-user bound (structured operators).
    method : {"auto", "exact", "power_iteration"}
        How ``rho`` is computed; ``auto`` uses the exact eigensolve when the
        dense matrix is small.
    rho : float, optional
        Precomputed spectral radius, skips the computation.

    Returns
    -------
    DampingBounds
    """
    n, m = op.n_rows, op.n_cols
    if rho is None:
        if method == "auto":
            method = "exact" if m <= DENSE_GUARD and n * m <= _AUTO_EXACT_ENTRIES else "power_iteration"
        rho = spectral_radius_centered(op, method)
    general = 2.0 / (1.0 + rho / n)
    worst_case = 2.0 / m
    structured = multi_user = None
    if isinstance(op, StructuredOperator):
        f_v, f_h, f_tau = op.fine_factors
        structured = 2.0 / (f_v * f_h * f_tau)
        if k_users is not None:
            k_users = check_positive_int(k_users, "k_users")
            multi_user = 2.0 / (k_users * f_v * f_h * f_tau)
    return DampingBounds(float(rho), general, worst_case, structured, multi_user)
