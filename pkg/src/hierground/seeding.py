"""Deterministic derivation of named random substreams from one seed.

Every module draws randomness from its own named substream so that
re-running a single pipeline stage consumes exactly the same random
numbers regardless of which other stages ran before it.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(seed: int, name: str) -> int:
    """Derive a stable 64-bit seed for the substream ``name``.

    Uses SHA-256 so the mapping is identical across platforms and runs
    (unlike the builtin string hash).
    """
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream_rng(seed: int, name: str) -> np.random.Generator:
    """A numpy generator seeded from the named substream."""
    return np.random.default_rng(substream_seed(seed, name))
