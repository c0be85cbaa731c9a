"""Deterministic random streams derived from one seed by labeled hashing."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Independent generator for (seed, labels); stable across runs and platforms."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"|")
        h.update(str(label).encode())
    entropy = int.from_bytes(h.digest()[:16], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy))
