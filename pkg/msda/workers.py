import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from loguru import logger

T = TypeVar("T")
R = TypeVar("R")


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(func: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = None) -> List[R]:
    """Ordered map over independent jobs.

    `func` must be a module-level function. Every job carries its own seed,
    so the output does not depend on `jobs`.
    """
    items = list(items)
    if jobs is None:
        jobs = default_jobs()
    jobs = max(1, min(int(jobs), len(items)))

    if jobs == 1:
        return [func(item) for item in items]

    logger.debug(f"Running {len(items)} jobs on {jobs} workers")
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
