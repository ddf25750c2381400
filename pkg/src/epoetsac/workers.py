"""Deterministic fan-out of rollout jobs.

A single-process pool of worker threads stands in for the original multi-host
cluster. Jobs are pure functions of their arguments, and results are always
collected in job-index order, so the outcome is byte-identical for any worker
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


class WorkerPool:
    def __init__(self, num_workers: int = 1):
        if num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        self.num_workers = num_workers

    def map(self, fn: Callable, jobs: Sequence) -> list:
        """Apply fn to each job; results in job order regardless of scheduling."""
        if self.num_workers == 1 or len(jobs) <= 1:
            return [fn(job) for job in jobs]
        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            return list(pool.map(fn, jobs))
