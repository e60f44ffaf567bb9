"""Deterministic random-stream derivation.

Every random draw in the package comes from a stream identified by a 64-bit
master seed, a purpose code and a tuple of integer indices (usually the
client id).  Streams are built with ``numpy.random.SeedSequence`` using the
``spawn_key`` mechanism, so the mapping below is stable across releases:

=========  ====  =====================================================
purpose    code  indices
=========  ====  =====================================================
instance   0     ()               placement of the planted optima
data       1     (client,)        training points of a client
local      2     (client,)        minibatches drawn by a client's SGD
clients    3     ()               client batches C_t drawn by the server
eval       4     (client,)        Monte Carlo fresh samples
stability  5     (client,)        replacement records in stability runs
split      6     (client,)        hold-out splits
probe      7     (client,)        probe points for stability sup-norms
=========  ====  =====================================================

A stream is consumed sequentially across rounds: round ``t`` of an algorithm
continues where round ``t - 1`` stopped.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "instance": 0,
    "data": 1,
    "local": 2,
    "clients": 3,
    "eval": 4,
    "stability": 5,
    "split": 6,
    "probe": 7,
}

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the generator for ``(seed, purpose, *indices)``."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    key = (PURPOSES[purpose],) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
