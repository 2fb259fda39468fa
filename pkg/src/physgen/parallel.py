"""Worker-pool helper honoring the PHYSGEN_THREADS cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from PHYSGEN_THREADS, defaulting to the hardware count."""
    raw = os.environ.get("PHYSGEN_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError as err:
            raise ValueError(f"PHYSGEN_THREADS must be an integer, got {raw!r}") from err
        if cap < 1:
            raise ValueError(f"PHYSGEN_THREADS must be >= 1, got {cap}")
        return cap
    return os.cpu_count() or 1


def map_workers(fn, items):
    """Ordered map over items on a thread pool (BLAS releases the GIL)."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
