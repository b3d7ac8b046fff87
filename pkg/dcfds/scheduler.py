from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Generic, TypeVar


logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(slots=True)
class WindowTask(Generic[T]):
    index: int
    item: T
    task: asyncio.Task | None = None


class WindowScheduler:
    """Runs independent window jobs on worker threads, at most ``workers`` at a time.

    Results come back in submission order whatever order the jobs finish in.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))

    async def run(self, items: Sequence[T], work: Callable[[T], R]) -> list[R]:
        if not items:
            return []
        semaphore = asyncio.Semaphore(self.workers)
        contexts = [WindowTask(index=index, item=item) for index, item in enumerate(items)]

        async def _run_one(context: WindowTask[T]) -> R:
            async with semaphore:
                logger.debug("window job %d started", context.index)
                return await asyncio.to_thread(work, context.item)

        for context in contexts:
            context.task = asyncio.create_task(_run_one(context))
        try:
            results = await asyncio.gather(*(context.task for context in contexts))
        except BaseException:
            for context in contexts:
                if context.task and not context.task.done():
                    context.task.cancel()
            await asyncio.gather(*(context.task for context in contexts), return_exceptions=True)
            raise

        logger.debug("%d window job(s) finished on %d worker(s)", len(results), self.workers)
        return list(results)

    def run_sync(self, items: Sequence[T], work: Callable[[T], R]) -> list[R]:
        if self.workers == 1:
            return [work(item) for item in items]
        return asyncio.run(self.run(items, work))
