"""Index-ordered replicate map.

Results are stored by replicate index and BLAS is pinned to one thread, so
outputs are bit-identical whatever the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

WORKERS_ENV = "RMTEQUIV_WORKERS"


class ReplicateError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"replicate {index} failed: {cause}")
        self.index = index


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def map_replicates(fn, count: int, workers: int | None = None) -> list:
    workers = resolve_workers(workers)

    def call(i):
        try:
            return fn(i)
        except Exception as exc:  # noqa: BLE001 - re-raised with the index
            raise ReplicateError(i, exc) from exc

    with threadpool_limits(limits=1, user_api="blas"):
        if workers == 1:
            return [call(i) for i in range(count)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(call, range(count)))
