"""The package-wide PRNG contract.

Every random choice flows from numpy's PCG64 generator, seeded explicitly
with a 64-bit integer.  Monte Carlo trials derive independent streams by
spawning ``SeedSequence(root_seed)``: trial i always receives child i, so a
run is reproducible for any trial count and trials can execute in any order
(or concurrently) without changing results.  Golden tests pin this generator;
do not substitute platform defaults.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Seed = int | Sequence[int]


def make_rng(seed: Seed) -> np.random.Generator:
    """PCG64 generator from an integer seed or an entropy tuple.

    Tuples name derived streams, e.g. (trial_seed, 0) for data generation
    and (trial_seed, 1) for audit sampling.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_rngs(root_seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-trial generators: child streams of the root seed."""
    children = np.random.SeedSequence(root_seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]
