"""Seed derivation and order-independent parallel mapping."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def derive_seed(*keys) -> int:
    """Stable 128-bit integer from an arbitrary key tuple (independent of ``PYTHONHASHSEED``)."""
    # numpy scalars reprs differ across numpy versions; normalize to builtins
    norm = tuple(k.item() if isinstance(k, np.generic) else k for k in keys)
    h = hashlib.blake2b(repr(norm).encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


def trial_rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(derive_seed(*keys)))


def resolve_workers(workers: int | None) -> int:
    """``0`` or ``None`` means one worker per CPU."""
    if not workers:
        return max(1, os.cpu_count() or 1)
    return max(1, int(workers))


def _run_chunk(fn, items):
    return [fn(item) for item in items]


def parallel_map(fn: Callable, items: Sequence, workers: int = 1, chunks_per_worker: int = 4) -> list:
    """``[fn(i) for i in items]``, optionally spread over worker processes.

    Results keep the order of ``items``; ``fn`` must be picklable when
    ``workers > 1``.
    """
    items = list(items)
    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(items) < 2 * n_workers:
        return [fn(item) for item in items]
    n_chunks = min(len(items), n_workers * chunks_per_worker)
    bounds = np.linspace(0, len(items), n_chunks + 1).astype(int)
    chunks: Iterable = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        parts = pool.map(_run_chunk, [fn] * n_chunks, chunks)
        return [r for part in parts for r in part]
