"""Input validation helpers.

scikit-learn's ``check_array`` rejects complex data, so the package carries
its own small set of checks. Each helper returns a clean numpy array (or
scalar) and raises :class:`~infogeom.exceptions.InvalidArgumentError` on bad
input.
"""

import numbers

import numpy as np

from .exceptions import InvalidArgumentError


def check_complex_vector(x, length=None, name="x"):
    """Return ``x`` as a finite 1-D complex128 array.

    Parameters
    ----------
    x : array_like
        Input vector.
    length : int, optional
        Required length.
    name : str
        Name used in error messages.
    """
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    if not (np.issubdtype(arr.dtype, np.number) or arr.dtype == bool):
        raise InvalidArgumentError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.complex128, copy=False)
    if length is not None and arr.shape[0] != length:
        raise InvalidArgumentError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_real_vector(x, length=None, name="x", positive=False, nonpositive=False):
    """Return ``x`` as a finite 1-D float64 array with optional sign checks."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        if np.any(arr.imag != 0):
            raise InvalidArgumentError(f"{name} must be real")
        arr = arr.real
    try:
        arr = arr.astype(np.float64, copy=False)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{name} must be numeric") from exc
    if length is not None and arr.shape[0] != length:
        raise InvalidArgumentError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    if positive and np.any(arr <= 0):
        raise InvalidArgumentError(f"{name} must be strictly positive")
    if nonpositive and np.any(arr > 0):
        raise InvalidArgumentError(f"{name} must be nonpositive")
    return arr


def check_complex_matrix(a, name="A"):
    """Return ``a`` as a finite 2-D complex128 array."""
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_positive_int(value, name, minimum=1):
    """Return ``value`` as ``int`` after checking it is an integer ``>= minimum``."""
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive_float(value, name):
    """Return ``value`` as a finite, strictly positive ``float``."""
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Real):
        raise InvalidArgumentError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be finite and > 0, got {value}")
    return value


def check_damping(d, allow_zero=False):
    """Validate a damping factor in (0, 1], or [0, 1] when ``allow_zero``."""
    if isinstance(d, (bool, np.bool_)) or not isinstance(d, numbers.Real):
        raise InvalidArgumentError(f"damping must be a real number, got {d!r}")
    d = float(d)
    low_ok = d >= 0 if allow_zero else d > 0
    if not (np.isfinite(d) and low_ok and d <= 1):
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise InvalidArgumentError(f"damping must lie in {interval}, got {d}")
    return d


def check_index_list(indices, upper, name="indices"):
    """Return a strictly increasing int64 array with entries in ``[0, upper)``."""
    arr = np.asarray(indices)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise InvalidArgumentError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} must be nonempty")
    if np.any(arr < 0) or np.any(arr >= upper):
        raise InvalidArgumentError(f"{name} must lie in [0, {upper})")
    if np.any(np.diff(arr) <= 0):
        raise InvalidArgumentError(f"{name} must be strictly increasing")
    return arr


def complex_to_pairs(z):
    """Encode a complex vector as a list of ``[re, im]`` pairs for JSON."""
    z = np.asarray(z, dtype=np.complex128)
    return [[float(v.real), float(v.imag)] for v in z]


def pairs_to_complex(pairs):
    """Inverse of :func:`complex_to_pairs`."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]
