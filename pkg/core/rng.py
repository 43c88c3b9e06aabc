"""Seeded random streams (Philox, keyed by a seed sequence)."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Returns an independent generator for (seed, *stream).

    The same key always yields the same stream, independent of the order in
    which streams are created, so parallel trials stay reproducible.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def derive_seed(seed: int, *stream: int) -> int:
    """64-bit seed derived from (seed, *stream), for reporting and re-seeding."""
    state = np.random.SeedSequence([seed, *stream]).generate_state(1, dtype=np.uint64)
    return int(state[0])
