"""Small shared helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from the SGNN_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("SGNN_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map preserving input order; uses threads only when SGNN_THREADS > 1.

    Each item must carry its own derived random stream, so results are
    identical whatever the schedule.
    """
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
