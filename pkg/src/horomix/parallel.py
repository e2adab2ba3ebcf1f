"""Worker pool for the nogil batch kernels.

The worker count comes from ``HOROMIX_THREADS`` (default 1).  Work is split
into contiguous blocks of start points and every kernel writes one row per
point, so results are identical for any worker count.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 2048


def worker_count():
    raw = os.environ.get("HOROMIX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"HOROMIX_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("HOROMIX_THREADS must be at least 1")
    return n


def map_blocks(fn, n, workers=None):
    """Run ``fn(i0, i1)`` over blocks of ``range(n)``; concatenate tuple outputs."""
    workers = workers or worker_count()
    bounds = [(i, min(i + BLOCK, n)) for i in range(0, n, BLOCK)]
    if workers == 1 or len(bounds) == 1:
        parts = [fn(i0, i1) for i0, i1 in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda b: fn(*b), bounds))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[k] for p in parts]) for k in range(len(parts[0])))
    return np.concatenate(parts)
