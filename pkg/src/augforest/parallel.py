from collections.abc import Callable, Iterable
from functools import partial

import anyio
from anyio import CapacityLimiter, create_task_group, to_thread


def parallel_map[T, R](fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """
    Apply fn to every item, using up to `threads` worker threads.

    Results are returned in input order regardless of completion order, so
    callers that reduce over them stay deterministic.
    """
    work = list(items)
    if threads <= 1 or len(work) <= 1:
        return [fn(item) for item in work]

    results: list[R | None] = [None] * len(work)

    async def _one(index: int, item: T, limiter: CapacityLimiter) -> None:
        results[index] = await to_thread.run_sync(partial(fn, item), limiter=limiter)

    async def _all() -> None:
        limiter = CapacityLimiter(threads)
        async with create_task_group() as tg:
            for index, item in enumerate(work):
                tg.start_soon(_one, index, item, limiter)

    anyio.run(_all)
    return results  # type: ignore[return-value]
