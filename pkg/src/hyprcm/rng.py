"""Reproducible random streams keyed by (seed, ..., purpose).

Every replica and purpose owns an independent Philox generator derived from
a SeedSequence, so results do not depend on scheduling or thread count.
Edge coins are not drawn from a stream at all: each unordered pair (i, j)
gets a uniform from a counter-based hash of (key, i, j), so adding points
never changes the coin of an existing pair.
"""
import numpy as np

POINTS = 0
MARKS = 1
EDGES = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def stream(seed, *keys):
    """A Philox generator for the key path (seed, *keys)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def pair_key(seed, *keys):
    """64-bit key for the pair hash of one replica."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys], EDGES])
    return np.uint64(ss.generate_state(1, dtype=np.uint64)[0])


def _mix(x):
    # splitmix64 finalizer
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def pair_uniforms(key, i, j):
    """Uniforms in [0, 1) for unordered pairs; symmetric in (i, j)."""
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) + _GOLDEN * (lo + np.uint64(1)))
        h = _mix(h + _GOLDEN * (hi + np.uint64(1)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
