"""Reproducible random streams for Monte Carlo replications.

Replications are grouped in consecutive blocks of :data:`BLOCK_SIZE`.  Block
``b`` draws from its own PCG64 stream seeded by ``SeedSequence(seed,
spawn_key=(b,))``, so the result for a given replication index depends only on
``(seed, index)`` and never on how blocks are spread over workers.
"""

from __future__ import annotations

from typing import Any, Callable, List

import numpy as np
from joblib import Parallel, delayed

BLOCK_SIZE = 1024


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))))


def block_sizes(reps: int) -> List[int]:
    full, rest = divmod(int(reps), BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def map_blocks(func: Callable[[np.random.Generator, int], Any], reps: int, seed: int,
               n_jobs: int = 1, stream: int = 0) -> list:
    """Evaluate ``func(rng, count)`` for every block and return results in block order."""
    sizes = block_sizes(reps)
    if n_jobs == 1 or len(sizes) <= 1:
        return [func(block_rng(seed, b, stream), c) for b, c in enumerate(sizes)]
    return Parallel(n_jobs=n_jobs)(delayed(func)(block_rng(seed, b, stream), c) for b, c in enumerate(sizes))
