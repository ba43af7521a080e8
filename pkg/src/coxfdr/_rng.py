"""Counter-based random streams.

All randomness in the package flows through Philox generators keyed by
``(seed, word)`` pairs of 64-bit integers.  Streams are therefore
independent of evaluation order and of how work is split across workers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def keyed_rng(seed, word):
    """Generator for the stream identified by ``(seed, word)``."""
    key = np.array([seed & _MASK64, word & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def rep_rng(seed, rep_index, stream):
    """Per-replication stream; ``stream`` is a small integer tag."""
    return keyed_rng(seed, (rep_index << 8) | stream)


def draw_subseed(rng):
    """One 63-bit integer usable as a fresh top-level seed."""
    return int(rng.integers(0, 1 << 63))


def row_keyed_normals(seed, n, p):
    """n x p standard normals; row i depends only on (seed, i).

    Permutation-stable: row i of the output is the same no matter how
    many rows are requested or in which order they are filled.
    """
    out = np.empty((n, p))
    for i in range(n):
        out[i] = keyed_rng(seed, i).standard_normal(p)
    return out
