"""Order-preserving chunked process pool.

Work items are split into contiguous chunks and results are concatenated in input order,
so output never depends on the worker count as long as ``fn`` treats items independently.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "DTLOC_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _call(job):
    fn, chunk, extra = job
    return fn(chunk, *extra)


def map_chunks(fn, items, workers: int = 1, extra: tuple = ()) -> list:
    items = list(items)
    if not items:
        return []
    if workers <= 1:
        return list(fn(items, *extra))
    n_chunks = min(len(items), workers * 4)
    step, rem = divmod(len(items), n_chunks)
    chunks, start = [], 0
    for i in range(n_chunks):
        stop = start + step + (1 if i < rem else 0)
        chunks.append(items[start:stop])
        start = stop
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_call, [(fn, c, extra) for c in chunks]):
            out.extend(part)
    return out
