"""Counter-based random streams keyed by ``(seed, *stream_ids)``.

Every replica / stage of an experiment draws from its own stream, so results
do not depend on how work is distributed across processes.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for the stream ``(seed, *stream)``.

    Identical arguments reproduce identical draws bit-for-bit.
    """
    if seed is None:
        raise ValueError("seed is mandatory")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator, an int seed, or a tuple ``(seed, *stream)``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, tuple):
        return make_rng(*rng)
    if isinstance(rng, (int, np.integer)):
        return make_rng(int(rng))
    raise TypeError(f"cannot build a random stream from {rng!r}")
