"""Ordered fan-out over work items with a thread cap.

Work is always split into the same items regardless of the thread count and
results come back in item order, so ``threads`` never changes the numbers.
BLAS is pinned to one thread while the pool runs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

THREADS_ENV = "GPRAE_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@contextmanager
def single_blas():
    with threadpool_limits(limits=1, user_api="blas"):
        yield


def map_ordered(fn, items, threads: int | None = None) -> list:
    threads = default_threads() if threads is None else max(1, int(threads))
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
