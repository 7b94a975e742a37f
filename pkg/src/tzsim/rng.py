"""Counter-based random streams.

Every draw in the simulator is a pure function of
``(master seed, module tag, entity id, step, draw index)``, so results do not
depend on evaluation order or on how many workers share the load.
The mixing function is SplitMix64's finalizer applied in a chain.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Module tags. Values are arbitrary but frozen: changing one changes every
# output produced under that tag.
TAG_INIT = 0x11
TAG_DIRECTION = 0x22
TAG_SPAWN = 0x33
TAG_CHAIN = 0x44
TAG_CSSO = 0x55
TAG_TEST = 0x66

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(value) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value))
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    # two's-complement reinterpretation keeps negative seeds distinct
    return arr.astype(np.int64).view(np.uint64)


@lru_cache(maxsize=256)
def _prefix(seed: int, tag: int) -> np.ndarray:
    return _mix(_mix(_as_u64(seed)) ^ _as_u64(tag))


def hash64(seed, tag, entity, step, index) -> np.ndarray:
    """Hash the five counters (broadcastable) into uint64 words."""
    if np.ndim(seed) == 0 and np.ndim(tag) == 0:
        z = _prefix(int(seed), int(tag))
    else:
        z = _mix(_mix(_as_u64(seed)) ^ _as_u64(tag))
    for part in (entity, step, index):
        z = _mix(z ^ _as_u64(part))
    return z


def uniform(seed, tag, entity, step, index=0) -> np.ndarray:
    """Uniform doubles in [0, 1) with 53 random bits."""
    return (hash64(seed, tag, entity, step, index) >> _S11).astype(np.float64) * _INV53


def uniform_scalar(seed: int, tag: int, entity: int, step: int, index: int = 0) -> float:
    return float(uniform(seed, tag, entity, step, index)[0])


def standard_normal(seed, tag, entity, step, index=0) -> np.ndarray:
    """Box-Muller normal built from draw indexes ``index`` and ``index + 1``."""
    index = np.asarray(index)
    u1 = 1.0 - uniform(seed, tag, entity, step, index)  # (0, 1]
    u2 = uniform(seed, tag, entity, step, index + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
