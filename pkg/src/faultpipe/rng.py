"""Seed derivation: every random stream descends from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Stable 63-bit seed for the substream named by ``labels``."""
    key = repr((int(seed),) + tuple(str(lab) for lab in labels)).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
