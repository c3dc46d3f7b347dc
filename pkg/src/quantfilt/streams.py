"""Deterministic hierarchical RNG streams.

Every random draw in the package comes from a stream addressed by a key
tuple such as ``(master_seed, run_index, time_index, "propagate")``.
Streams are independent of thread scheduling and of which other streams
were consumed, so Monte Carlo batteries are reproducible regardless of
parallelism, and algorithm variants sharing a key tuple see identical
draws (e.g. the same process noise across resampling schemes).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(*keys) -> np.random.Generator:
    """Generator for the stream addressed by ``keys`` (ints or strings)."""
    return np.random.default_rng(np.random.SeedSequence([_key_int(k) for k in keys]))
