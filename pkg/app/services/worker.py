import logging
import multiprocessing
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

worker_cap = multiprocessing.cpu_count() * 2  # cap at 2x CPU cores


def prefetch(jobs: Iterable[Callable[[], T]], max_workers: int = 2, lookahead: int = None) -> Iterator[T]:
    """
    Run jobs on a thread pool ahead of the consumer and yield results in submission order.

    Jobs must not depend on each other's side effects; any randomness they use
    comes from their own stream, so results equal a sequential run.

    Args:
        jobs (Iterable[Callable[[], T]]): Zero-argument callables, consumed lazily.
        max_workers (int): Threads to use, capped at twice the CPU count; 0 runs jobs in the caller.
        lookahead (int, optional): Jobs in flight at once; defaults to twice the thread count.

    Yields:
        T: Each job's result. A job's exception is raised when its turn comes.
    """
    if max_workers <= 0:
        for job in jobs:
            yield job()
        return

    workers = min(max_workers, worker_cap)
    lookahead = lookahead or 2 * workers
    logger.debug(f"[Worker] Prefetching with {workers} threads, {lookahead} jobs in flight")
    pending = deque()
    executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="dave-prefetch")
    try:
        for job in jobs:
            pending.append(executor.submit(job))
            if len(pending) >= lookahead:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
    finally:
        # Abandoned generators must not leave queued jobs running
        executor.shutdown(wait=True, cancel_futures=True)
