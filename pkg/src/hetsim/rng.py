"""Deterministic derivation of named random streams.

Every random draw in a run descends from one root seed. Child streams are
keyed by stable string labels (device id, purpose) so that adding a new
consumer of randomness never shifts the draws seen by existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np


def child_seed(root_seed: int, *labels: str | int) -> int:
    """Derive a 64-bit seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def child_rng(root_seed: int, *labels: str | int) -> np.random.Generator:
    """A generator whose stream depends only on (root_seed, labels)."""
    return np.random.default_rng(child_seed(root_seed, *labels))
