"""Order-preserving parallel map.

Each work item owns its random stream, so results do not depend on how
items are scheduled; the map returns them in input order and every reduction
downstream runs over that fixed order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_default_threads = int(os.environ.get("POISSON_STEIN_THREADS", "1"))


def set_default_threads(n: int) -> None:
    global _default_threads
    _default_threads = max(1, int(n))


def default_threads() -> int:
    return _default_threads


def pmap(fn, items, threads=None):
    items = list(items)
    n = default_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
