"""Deterministic child-seed derivation.

Every source of randomness in the package is a pure function of an integer
seed.  Parallel or resumable pipelines derive per-task seeds with
:func:`derive_seed` instead of sharing a stateful generator, so results do
not depend on execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(parent: int, *keys: int | str) -> int:
    """Derive a child seed from ``parent`` and a path of keys.

    Counter-based: the same ``(parent, *keys)`` always yields the same
    child, and distinct key paths yield independent streams.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(parent & _MASK64).to_bytes(8, "little"))
    for key in keys:
        if isinstance(key, str):
            h.update(b"s" + key.encode("utf-8") + b"\x00")
        else:
            h.update(b"i" + int(key & _MASK64).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


def rng_for(parent: int, *keys: int | str) -> np.random.Generator:
    """A numpy generator seeded from ``derive_seed(parent, *keys)``."""
    return np.random.default_rng(derive_seed(parent, *keys))
