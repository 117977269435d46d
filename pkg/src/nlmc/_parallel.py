"""Thread-pool helper for embarrassingly parallel sweeps.

The environment variable ``NLMC_THREADS`` caps worker count (default 1,
meaning plain sequential evaluation).  Results always come back in input
order, so sweep output is identical whatever the setting.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "NLMC_THREADS"


def thread_count() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(func, items) -> list:
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
