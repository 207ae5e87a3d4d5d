"""Deterministic seed derivation.

Every random draw in the toolkit flows from a single root seed through
named child seeds, so independent pipeline stages get independent streams
and any stage can be re-run in isolation, in any process, with identical
results. Child seeds are derived by hashing the root together with a tag
path, which makes the scheme splittable: adding a consumer never perturbs
the streams of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_UINT64_MASK = (1 << 64) - 1


def derive_seed(root: int, *tags: int | str) -> int:
    """Derive a stable 64-bit child seed from a root seed and a tag path.

    Args:
        root: root seed (any Python int; reduced mod 2**64).
        tags: mixed ints/strings naming the consumer, e.g. ("template", 7).

    Returns:
        Unsigned 64-bit integer seed, stable across platforms and processes.
    """
    h = hashlib.blake2s(digest_size=8)
    h.update((int(root) & _UINT64_MASK).to_bytes(8, "little"))
    for tag in tags:
        if isinstance(tag, str):
            h.update(b"s" + tag.encode("utf-8"))
        else:
            h.update(b"i" + (int(tag) & _UINT64_MASK).to_bytes(8, "little"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def rng_for(root: int, *tags: int | str) -> np.random.Generator:
    """Generator seeded with derive_seed(root, *tags)."""
    return np.random.default_rng(derive_seed(root, *tags))
