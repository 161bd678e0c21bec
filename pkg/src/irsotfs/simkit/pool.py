"""Deterministic work pool and per-task random streams."""

from concurrent.futures import ProcessPoolExecutor

import numpy as np


def task_rng(seed, *keys):
    """Independent generator for a task identified by integer keys."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def run_tasks(fn, tasks, workers=1):
    """Evaluate ``fn`` on every task; results come back in task order.

    Results are written into pre-allocated slots, so the outcome does not
    depend on completion order or on the worker count.
    """
    tasks = list(tasks)
    out = [None] * len(tasks)
    if workers <= 1 or len(tasks) <= 1:
        for i, t in enumerate(tasks):
            out[i] = fn(t)
        return out
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(fn, t): i for i, t in enumerate(tasks)}
        for fut, i in futures.items():
            out[i] = fut.result()
    return out
