"""Deterministic seed derivation shared by masking, shuffling, and init.

Every random decision in the package flows through a Generator obtained
from a tuple of labels, so runs are reproducible given the global seed and
independent of execution order (shard-parallel masking stays stable).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Map a tuple of labels to a stable 63-bit seed via sha256."""
    h = hashlib.sha256()
    for part in parts:
        # Tag the type so ("1",) and (1,) cannot collide.
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")
        tag = b"i" if isinstance(part, int) else b"s"
        data = str(part).encode("utf-8")
        h.update(tag)
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest()[:8], "little") & ((1 << 63) - 1)


def rng_for(*parts: int | str) -> np.random.Generator:
    """PCG64 generator keyed by the given labels."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
