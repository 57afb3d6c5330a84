"""
Order-preserving map over a thread pool.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1,
                 desc: Optional[str] = None, verbose: bool = False) -> List[R]:
    """
    Apply fn to every item and return results in input order.

    threads=1 runs inline, which is the bitwise-reproducible mode.
    """
    items = list(items)
    with tqdm(total=len(items), desc=desc, disable=not verbose) as pbar:
        if threads <= 1:
            results = []
            for item in items:
                results.append(fn(item))
                pbar.update(1)
            return results
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = []
            for result in pool.map(fn, items):
                results.append(result)
                pbar.update(1)
            return results
