"""Ordered task execution over a process pool.

Results always come back in task order, so reductions over them are
independent of the worker count.
"""

import multiprocessing
from concurrent.futures import ProcessPoolExecutor


def ordered_map(fn, tasks, workers=1):
    tasks = list(tasks)
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(fn, tasks))
