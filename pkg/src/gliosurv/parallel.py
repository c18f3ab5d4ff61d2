"""Thread-pool helpers.  Results always come back in input order, so serial and
parallel runs produce identical outputs."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_jobs(n_jobs) -> int:
    if n_jobs is None or n_jobs == 0:
        return 1
    if n_jobs < 0:
        return max(1, (os.cpu_count() or 1) + 1 + n_jobs)
    return int(n_jobs)


def map_ordered(fn, items, n_jobs=1) -> list:
    items = list(items)
    workers = min(resolve_jobs(n_jobs), max(1, len(items)))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
