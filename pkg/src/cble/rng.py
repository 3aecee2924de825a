"""Reproducible random streams and block-parallel Monte Carlo reduction.

Every estimator draws its randomness from counter-based Philox streams keyed
by ``(seed, tag, block_index)``. Paths are grouped in fixed-size blocks, so the
random numbers used by path ``i`` depend only on the seed, the estimator tag
and ``i`` -- never on how many worker threads evaluate the blocks.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence

import numpy as np

DEFAULT_SEED = 20240917
BLOCK_SIZE = 512


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for the ``index``-th stream of ``(seed, tag)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_key(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, block_size: int = BLOCK_SIZE) -> List[tuple]:
    """Split ``n`` paths into ``(block_index, start, count)`` triples."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = []
    for b, start in enumerate(range(0, n, block_size)):
        out.append((b, start, min(block_size, n - start)))
    return out


def map_blocks(fn: Callable[[np.random.Generator, int], object], n: int, seed: int,
               tag: str, threads: int = 1, block_size: int = BLOCK_SIZE) -> list:
    """Evaluate ``fn(rng, count)`` on every block; results come back in block order."""
    jobs = blocks(n, block_size)

    def run(job):
        b, _, count = job
        return fn(stream(seed, tag, b), count)

    if threads <= 1 or len(jobs) <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def fsum_mean(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan")
    return math.fsum(values.tolist()) / values.size


def mean_and_stderr(values) -> tuple:
    """Compensated mean and standard error of the mean, in fixed order."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    m = fsum_mean(values)
    if n < 2:
        return m, 0.0
    dev = values - m
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    return m, math.sqrt(var / n)
