import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None):
    """Explicit value, else ``ZLAP_THREADS``, else the number of available cores."""
    if threads is None:
        env = os.environ.get("ZLAP_THREADS")
        if env:
            threads = int(env)
    if threads is None:
        try:
            threads = len(os.sched_getaffinity(0))
        except AttributeError:
            threads = os.cpu_count() or 1
    return max(1, int(threads))


def parallel_map(fn, items, threads=None):
    """Ordered map over ``items``; runs inline when one thread is requested.

    Work partitioning must not depend on ``threads`` so outputs stay identical.
    """
    items = list(items)
    threads = min(resolve_threads(threads), len(items))
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
