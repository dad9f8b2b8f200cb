"""Deterministic seed derivation.

Every source of randomness in the package flows from integer keys pushed
through numpy's SeedSequence, so results depend only on the keys and never
on process layout, thread count, or call interleaving.  String keys (method
names) are folded to integers with a fixed hash so derivations stay stable
across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_MASK63 = (1 << 63) - 1


def _norm_key(key: int | str) -> int:
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") & _MASK63
    return int(key) & _MASK64


def make_rng(*keys: int | str) -> np.random.Generator:
    """Generator seeded purely by the given key path."""
    ss = np.random.SeedSequence([_norm_key(k) for k in keys])
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(*keys: int | str) -> int:
    """A 63-bit integer seed derived from the key path; stable across runs."""
    ss = np.random.SeedSequence([_norm_key(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0]) & _MASK63
