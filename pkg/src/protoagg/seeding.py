"""Deterministic derivation of per-purpose seeds from one master seed.

Every randomized stage (dataset split, query sampling, weight init,
triplet draws, ...) gets its own label so changing one stage never
perturbs the random stream of another.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Map (master seed, stage label) to a stable 63-bit seed."""
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
