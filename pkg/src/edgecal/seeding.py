"""Deterministic seed derivation.

Every random stream in the pipeline is a PCG64 generator seeded from
``numpy.random.SeedSequence(root_seed, spawn_key=path)``. The path is a tuple of
small integers naming the stage (replication number, stage id, replicate
number, ...), so any stage can be replayed in isolation and results do not
depend on scheduling order.
"""

from __future__ import annotations

import numpy as np

# Stage identifiers used in spawn-key paths.
SIMULATION = 1
BOOTSTRAP = 2
SPLIT = 3
TRAINING = 4
MASKING = 5
SAMPLING = 6
EVALUATION = 7


def mix(seed: int, *path: int) -> int:
    """Derive a 63-bit child seed from ``seed`` and an integer path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng(seed: int, *path: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` along ``path``."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path)))
    )
