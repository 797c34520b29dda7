"""Deterministic counter-based random streams.

Every stochastic routine in the package draws from a Philox generator whose
128-bit key is derived from (seed, *ids) with a stable hash. Streams are
therefore reproducible across runs, platforms and worker counts: a trajectory's
stream depends only on the run seed, a purpose salt and the trajectory index,
never on which worker happens to execute it.
"""

import hashlib

import numpy as np


def stream_key(seed, *ids):
    """Derive a 128-bit Philox key from a seed and integer/str identifiers."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for i in ids:
        h.update(b"/")
        h.update(str(i).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed, *ids):
    """A numpy Generator on an independent Philox stream keyed by (seed, *ids)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *ids)))
