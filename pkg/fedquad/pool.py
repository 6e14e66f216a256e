import asyncio
from typing import Callable, List, Sequence, TypeVar

from tqdm import tqdm

from .model import EncoderModel

J = TypeVar("J")
R = TypeVar("R")


async def _run_sem(sem, coro):
    async with sem:
        return await coro


class ClientPool:
    """Runs per-client jobs on up to `workers` threads.

    Each running job borrows one model instance (layers hold per-pass caches, so
    instances are never shared between live jobs). Results come back in job order,
    whatever order the threads finish in.
    """

    def __init__(self, model_fn: Callable[[], EncoderModel], workers: int = 1,
                 quiet: bool = True):
        self.model_fn = model_fn
        self.workers = max(1, int(workers))
        self.quiet = quiet
        self._models: List[EncoderModel] = []

    def _ensure_models(self, n: int):
        while len(self._models) < n:
            self._models.append(self.model_fn())

    def primary_model(self) -> EncoderModel:
        """The instance single-worker jobs run on; free between `map` calls."""
        self._ensure_models(1)
        return self._models[0]

    def map(self, fn: Callable[[EncoderModel, J], R], jobs: Sequence[J],
            desc: str = "clients") -> List[R]:
        if not jobs:
            return []
        width = min(self.workers, len(jobs))
        self._ensure_models(width)
        if width == 1:
            outs = []
            for job in tqdm(jobs, desc=desc, disable=self.quiet, leave=False):
                outs.append(fn(self._models[0], job))
            return outs
        return asyncio.run(self._map_async(fn, jobs, width, desc))

    async def _map_async(self, fn, jobs, width, desc):
        sem = asyncio.Semaphore(width)
        free: asyncio.Queue = asyncio.Queue()
        for m in self._models[:width]:
            free.put_nowait(m)
        bar = tqdm(total=len(jobs), desc=desc, disable=self.quiet, leave=False)

        async def one(job):
            model = await free.get()
            try:
                return await asyncio.to_thread(fn, model, job)
            finally:
                free.put_nowait(model)
                bar.update(1)

        tasks = [asyncio.create_task(_run_sem(sem, one(job))) for job in jobs]
        try:
            outs = await asyncio.gather(*tasks, return_exceptions=True)
        finally:
            bar.close()
        # first failure in job order, not completion order
        for out in outs:
            if isinstance(out, BaseException):
                raise out
        return list(outs)
