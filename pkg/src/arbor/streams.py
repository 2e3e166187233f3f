"""Named, splittable random streams and the thread cap.

Every random draw derives from one root seed plus a stream name and index,
so results do not depend on how work is scheduled across threads.
"""

from __future__ import annotations

import os
import secrets
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def fresh_seed() -> int:
    return secrets.randbits(63)


def generator(seed: int, name: str, *index: int) -> np.random.Generator:
    key = [int(seed) & (2**63 - 1), zlib.crc32(name.encode()), *(int(i) for i in index)]
    return np.random.default_rng(np.random.SeedSequence(key))


def thread_count(default: int = 1) -> int:
    raw = os.environ.get("ARBOR_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def ordered_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` run on up to ``threads`` workers, order preserved."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
