"""Deterministic seeding.

Every trajectory (or DLA aggregate) owns one PCG64 stream. Ensemble member
``i`` of a run with base seed ``b`` uses the 64-bit seed
``split_seed(b, i)``, which is the first word produced by
``SeedSequence(b, spawn_key=(i,))``. This is the same child that
``SeedSequence(b).spawn(i + 1)[i]`` would yield, so members are
statistically independent and any single member can be replayed on its own
with ``stream(split_seed(b, i))``.
"""

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def split_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(check_seed(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))
