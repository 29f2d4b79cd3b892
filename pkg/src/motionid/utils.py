from typing import Callable, Iterable, List, TypeVar
from pathlib import Path
import concurrent.futures
import logging
import os


logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV_VAR = "MOTIONID_THREADS"


def worker_count() -> int:
    """
    Return how many workers parallel stages may use.

    The MOTIONID_THREADS environment variable wins when it holds a positive
    integer. Otherwise we use every CPU the OS tells us about.
    """
    requested = os.getenv(THREADS_ENV_VAR, None)
    if requested is not None:
        try:
            count = int(requested)
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={requested!r}")
        else:
            if count > 0:
                return count
            logger.warning(f"Ignoring non-positive {THREADS_ENV_VAR}={requested!r}")
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """
    Apply FN to every item of ITEMS on a thread pool and return the results in
    input order.

    Each call must be independent of the others (its own seed, its own
    outputs), which keeps the results identical to a sequential run.
    """
    items = list(items)
    workers = min(worker_count(), max(len(items), 1))
    if workers == 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} jobs on {workers=!s} threads")
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ensure_dir(dir: Path) -> Path:
    """
    Create DIR (and its parents) if needed and return it.
    """
    if not dir.exists():
        logger.debug(f"Creating {dir=!s}")
        dir.mkdir(parents=True, exist_ok=True)
    return dir
