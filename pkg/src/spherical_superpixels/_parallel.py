"""Row-chunked thread parallelism for per-pixel kernels.

Work is split into contiguous index ranges; each range is computed by an
independent call and results are concatenated in range order. Kernels
passed here must be pure per-element maps, so the output is bit-identical
for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_threads = None

# Below this many items the pool overhead dominates.
MIN_CHUNK = 16384


def set_threads(n: int | None) -> None:
    """Set the worker count; ``None`` or ``0`` means one per CPU."""
    global _threads
    if n is not None and n < 0:
        raise ValueError("thread count must be non-negative")
    _threads = n or None


def get_threads() -> int:
    return _threads or os.cpu_count() or 1


def map_ranges(fn, n: int, threads: int | None = None):
    """Call ``fn(start, stop)`` over a partition of ``range(n)``.

    Returns the list of results in order.
    """
    threads = threads or get_threads()
    n_chunks = max(1, min(threads, n // MIN_CHUNK))
    if n_chunks == 1:
        return [fn(0, n)]
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_chunks) as pool:
        futures = [pool.submit(fn, a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        return [f.result() for f in futures]


def concat_map(fn, n: int, threads: int | None = None) -> np.ndarray:
    parts = map_ranges(fn, n, threads)
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
