"""Counter-based seed splitting for reproducible, order-independent trials."""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]


def trial_seed(master_seed: int, stream: int, trial_index: int) -> int:
    """Seed of one trial, a pure function of the master seed, a stream id and the trial number."""
    sequence = np.random.SeedSequence([int(master_seed), int(stream), int(trial_index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
