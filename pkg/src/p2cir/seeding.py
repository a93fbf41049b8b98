"""Stable seed derivation so one top-level seed drives every subsystem."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, *labels) -> int:
    """64-bit child seed from a parent seed and a label path.

    Uses sha256 over a canonical string so the mapping is stable across
    platforms and Python versions.
    """
    key = ":".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
