"""Counter-based random streams.

Every draw is a pure function of ``(seed, tag, *keys)`` so values can be
generated lazily, in any order, and in parallel without shared state.  The
mixer is the SplitMix64 finalizer applied along the key chain.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# stream tags; one per consumer so streams never collide
WHITE = 1
POISSON_COUNT = 2
POISSON_POS = 3
LINEAR = 4
RPSG = 5
BROWNIAN = 6
PERIODIC = 7
GREENS_MC = 8
GAMBLER = 9
LOCAL_INIT = 10
REPLICA = 11
RESAMPLE = 12
FUZZ = 13


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x):
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind == "u":
        return a.astype(np.uint64)
    return a.astype(np.int64).astype(np.uint64)


def hash_keys(seed, tag, *keys):
    """Hash a key chain to uint64; keys broadcast against each other."""
    with np.errstate(over="ignore"):
        h = _mix(_as_u64(seed) + _GOLDEN * np.uint64(tag + 1))
        for i, k in enumerate(keys):
            h = _mix(h ^ (_as_u64(k) + _GOLDEN * np.uint64(i + 2)))
    return h


def uniform(seed, tag, *keys):
    """Uniform doubles in the open interval (0, 1)."""
    h = hash_keys(seed, tag, *keys)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(seed, tag, *keys):
    """Standard Gaussians by inverse CDF of :func:`uniform`."""
    return ndtri(uniform(seed, tag, *keys))


def substream(seed, tag, *keys):
    """Derive a child seed as a Python int."""
    return int(hash_keys(seed, tag, *keys)) & _MASK64
