"""Seed derivation helpers.

Every stochastic step in the pipeline derives its generator from a user
seed plus integer stream identifiers, so whole experiments replay exactly
from one seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def seed_sequence(*parts: int) -> np.random.SeedSequence:
    """Build a SeedSequence from integer parts (negatives are wrapped)."""
    return np.random.SeedSequence([int(p) & _MASK64 for p in parts])


def make_rng(*parts: int) -> np.random.Generator:
    """Deterministic generator for the given seed parts."""
    return np.random.default_rng(seed_sequence(*parts))


def derive_seed(*parts: int) -> int:
    """Collapse seed parts into a single 64-bit integer seed."""
    return int(seed_sequence(*parts).generate_state(1, dtype=np.uint64)[0])
