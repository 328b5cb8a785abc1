from multiprocessing.pool import ThreadPool
from typing import Callable, Iterable, List, TypeVar

T = TypeVar('T')
R = TypeVar('R')


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """
    Maps `fn` over `items` on a thread pool, returning results in input order.

    With `workers` <= 1 the map runs inline, which is what tests and debugging want. Callers
    must derive any randomness from the item itself, never from shared generators, so the
    result does not depend on scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPool(min(workers, len(items))) as pool:
        return pool.map(fn, items)
