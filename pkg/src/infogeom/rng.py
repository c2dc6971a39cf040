"""Reproducible random streams.

Every random draw in the package goes through :func:`make_rng`, which keys a
Philox counter-based generator with the pair ``(seed, stream)``. The same pair
always yields the same stream, independent of platform or call order, and
different stream ids give statistically independent streams for one seed.
"""

import numpy as np

from .exceptions import InvalidArgumentError

# Stream ids. Fixed forever so that stored results stay reproducible.
STREAM_POWER = 1
STREAM_CHANNEL = 2
STREAM_NOISE = 3
STREAM_OPERATOR = 4
STREAM_PHASES = 5
STREAM_PROBE = 6
STREAM_TRIAL = 7

_UINT64_MAX = 2**64 - 1


def make_rng(seed, stream=0):
    """Return a Philox generator keyed by ``(seed, stream)``.

    Parameters
    ----------
    seed : int
        Non-negative integer below 2**64.
    stream : int, default=0
        Non-negative integer below 2**64 identifying the stream.

    Returns
    -------
    numpy.random.Generator
    """
    for name, value in (("seed", seed), ("stream", stream)):
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, np.integer)):
            raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
        if value < 0 or value > _UINT64_MAX:
            raise InvalidArgumentError(f"{name} must lie in [0, 2**64), got {value}")
    key = np.array([int(seed), int(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed, *indices):
    """Derive a child seed from a parent seed and a tuple of indices.

    The derivation draws one 63-bit integer from the Philox stream keyed by
    ``seed`` and a stream id folded from ``indices``; it is deterministic and
    independent of evaluation order.
    """
    stream = STREAM_TRIAL
    for idx in indices:
        # 1_000_003 is prime; folding keeps distinct index tuples apart
        stream = (stream * 1_000_003 + int(idx) + 1) % _UINT64_MAX
    return int(make_rng(seed, stream).integers(0, 2**63 - 1))


def complex_normal(rng, size, var=1.0):
    """Draw circular complex Gaussian samples CN(0, var).

    Real and imaginary parts are independent N(0, var / 2), so that
    ``E|x|**2 == var``. ``var`` broadcasts against ``size``.
    """
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return scale * (re + 1j * im)
