"""Keyed, counter-based random streams.

Every simulation draws from ``stream(seed, *key)``: a Philox generator whose
key is derived from the global seed and a tuple of integers (subsystem,
stream id, block index, ...).  Work is split into fixed-size blocks with
their own keys, so results do not depend on how blocks are scheduled.
"""
from __future__ import annotations

import numpy as np

PATHS = 1
EXCURSIONS = 2
TREES = 3

BLOCK_SIZE = 512


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key)``."""
    if seed is None:
        raise ValueError("a seed is required")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, block_size: int = BLOCK_SIZE):
    """``(index, start, stop)`` for consecutive blocks covering ``range(n)``."""
    return [(i, lo, min(lo + block_size, n)) for i, lo in enumerate(range(0, n, block_size))]


def run_blocks(fn, tasks, workers: int = 1):
    """Apply ``fn`` to each task, optionally on a thread pool; order is kept."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
