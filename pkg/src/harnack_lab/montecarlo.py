"""Seeded substreams and block-parallel Monte Carlo execution.

Trials are grouped into fixed-size blocks of ``BLOCK_SIZE``.  Block ``k`` of
stream ``name`` draws from::

    Generator(PCG64(SeedSequence(seed, spawn_key=(crc32(name), k))))

so every trial's random numbers depend only on ``(seed, name, trial index)``
and never on the number of workers.  Blocks are reassembled in index order
before any reduction, which keeps floating-point summation order fixed.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 512

__all__ = [
    "BLOCK_SIZE",
    "derive_substream",
    "stream_tag",
    "blocks",
    "map_blocks",
    "default_workers",
    "mean_se",
    "log_mean_se",
]


def stream_tag(name):
    """Stable integer tag for a named stream."""
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def derive_substream(seed, trial_index, stream=0):
    """Independent, reproducible generator for ``(seed, stream, trial_index)``."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(seed, spawn_key=(stream_tag(stream), int(trial_index)))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n):
    """``(block_index, size)`` pairs covering ``n`` trials."""
    if n < 1:
        raise ValueError("need at least one trial")
    full, rest = divmod(n, BLOCK_SIZE)
    out = [(k, BLOCK_SIZE) for k in range(full)]
    if rest:
        out.append((full, rest))
    return out


def default_workers():
    return int(os.environ.get("HARNACK_LAB_WORKERS", "1"))


def map_blocks(fn, n, workers=None):
    """Evaluate ``fn(block_index, size)`` over all blocks; results in block order."""
    todo = blocks(n)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(todo) == 1:
        return [fn(k, size) for k, size in todo]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, k, size) for k, size in todo]
        return [f.result() for f in futures]


def mean_se(samples):
    """Sample mean and its standard error."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def log_mean_se(samples):
    """log of the sample mean with a delta-method standard error."""
    m, se = mean_se(samples)
    if m <= 0:
        return float("-inf"), 0.0
    return float(np.log(m)), se / m
