"""
This submodule contains the worker-count policy (the ``SMDP_THREADS``
environment variable caps it) and an order-preserving parallel map over a
thread pool. Tapes are thread-local, so each worker records its own.
"""

import concurrent.futures
import os
import typing

import loguru


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "THREADS_ENV_VAR",
    "worker_count",
    "partition",
    "parallel_map",
]


THREADS_ENV_VAR = "SMDP_THREADS"


logger = loguru.logger

T = typing.TypeVar("T")
R = typing.TypeVar("R")


def worker_count(requested: typing.Optional[int] = None) -> int:
    """
    Returns the number of workers to use: :py:data:`requested` (or the CPU
    count when omitted), capped by ``$SMDP_THREADS`` when it is set.
    """
    count = requested if requested is not None else (os.cpu_count() or 1)

    cap = os.getenv(THREADS_ENV_VAR)
    if cap:
        try:
            count = min(count, int(cap))
        except ValueError:
            logger.warning("Ignoring non-integer ${}={!r}.", THREADS_ENV_VAR, cap)

    return max(1, int(count))


def partition(size: int, parts: int) -> typing.List[slice]:
    """Splits ``range(size)`` into at most :py:data:`parts` contiguous, nonempty slices."""
    parts = max(1, min(parts, size))
    bounds = [round(i * size / parts) for i in range(parts + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i + 1] > bounds[i]]


def parallel_map(
        fn: typing.Callable[[T], R],
        items: typing.Sequence[T],
        workers: int = 1,
) -> typing.List[R]:
    """
    Applies :py:data:`fn` to every item and returns the results in input
    order. With one worker (or one item) everything runs inline.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
