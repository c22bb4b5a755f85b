"""Counter-style deterministic RNG derivation.

Every random draw in the package comes from a generator derived here
from a master seed plus a key tuple naming the work unit (case id,
organ id, slice index, draw purpose, ...). Results therefore depend
only on the keys, never on scheduling order or worker count, and are
stable across processes (the hash is explicit, not ``hash()``).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(*parts) -> int:
    """Collapse an arbitrary key tuple into a 128-bit integer seed."""
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_rng(*parts) -> np.random.Generator:
    """Independent generator for the stream named by ``parts``."""
    return np.random.default_rng(derive_seed(*parts))
