"""Seeded random streams.

Every stochastic stage draws from a Philox (counter-based) generator whose key
is derived from the run's root seed and a stable stage label, so adding a
stage never shifts the numbers another stage sees.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(root_seed: int, *labels: str | int) -> int:
    h = hashlib.sha256(str(int(root_seed) & MASK64).encode())
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def make_rng(root_seed: int, *labels: str | int) -> np.random.Generator:
    seed = derive_seed(root_seed, *labels) if labels else int(root_seed) & MASK64
    return np.random.Generator(np.random.Philox(seed))
