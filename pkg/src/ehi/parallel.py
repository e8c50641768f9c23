"""Deterministic fan-out over a small thread pool.

The worker count comes from the ``EHI_THREADS`` environment variable
(default 1).  Results are always returned in input order, and random streams
are keyed by ``(seed, purpose, block)`` rather than by worker, so outputs do
not depend on the thread count.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

__all__ = ["thread_count", "map_ordered", "stream", "new_seed", "BLOCK"]

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "EHI_THREADS"
# replicas per random block; fixed so results do not depend on batching
BLOCK = 4096


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator determined by ``(seed, purpose, index)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _tag(purpose), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def new_seed() -> int:
    """Fresh 63-bit seed from OS entropy."""
    return int(np.random.SeedSequence().entropy % (2**63))
