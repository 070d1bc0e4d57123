"""Order-preserving parallel map used by per-cube and per-ball loops.

Results are collected by input index, so outputs are byte-identical whatever
the thread count; tasks must be pure functions of their arguments.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_DEFAULT_THREADS = 1


def set_default_threads(n: int | None) -> None:
    global _DEFAULT_THREADS
    _DEFAULT_THREADS = max(1, int(n)) if n else (os.cpu_count() or 1)


def get_default_threads() -> int:
    return _DEFAULT_THREADS


def parallel_map(fn, items, threads: int | None = None) -> list:
    items = list(items)
    threads = threads if threads is not None else _DEFAULT_THREADS
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
