"""Ordered parallel map over independent work items.

The worker count comes from ``JCAS_THREADS`` (default 1, i.e. serial).
Large read-only inputs are passed once per worker through ``shared``.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

_SHARED = None


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    try:
        return max(1, int(os.environ.get("JCAS_THREADS", "1")))
    except ValueError:
        return 1


def _init(shared):
    global _SHARED
    _SHARED = shared


def _call(args):
    fn, item = args
    return fn(_SHARED, item)


def pmap(fn, items, shared=None, workers: int | None = None) -> list:
    """``[fn(shared, item) for item in items]``, possibly in worker processes.

    ``fn`` must be a module-level function; results keep the input order.
    """
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(shared, it) for it in items]
    with ProcessPoolExecutor(max_workers=n, initializer=_init, initargs=(shared,)) as ex:
        return list(ex.map(_call, [(fn, it) for it in items]))
