"""Order-independent parallel primitives: scan, compaction, counter scatter.

Every pass is a set of independent chunk tasks run on a thread pool.  A pass
returns only after all of its tasks have finished, so the next pass observes
every write of the previous one.  numpy releases the GIL for the bulk array
work inside each chunk, which is where the actual concurrency comes from.
"""
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from qgmap.errors import ConsistencyError, InputError

DEFAULT_CHUNK = 1 << 16


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return workers


def parallel_for(n: int, task: Callable[[int, int], None], workers: int = 1,
                 chunk: int = DEFAULT_CHUNK) -> None:
    """Run ``task(lo, hi)`` over ``[0, n)`` split into chunks.

    Exceptions raised by any chunk propagate to the caller after the pass.
    """
    if n <= 0:
        return
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            task(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(task, lo, hi) for lo, hi in bounds]:
            fut.result()


class CounterArray:
    """Array of unsigned counters whose updates are atomic per batch."""

    def __init__(self, size: int, dtype=np.uint32):
        self.values = np.zeros(size, dtype=dtype)
        self._lock = threading.Lock()

    def __len__(self):
        return self.values.shape[0]

    def add(self, slots: np.ndarray, amounts=1) -> None:
        with self._lock:
            np.add.at(self.values, slots, amounts)

    def fetch_add(self, slots: np.ndarray, amounts: np.ndarray) -> np.ndarray:
        """Add ``amounts`` at distinct ``slots``; return the values before."""
        with self._lock:
            before = self.values[slots].copy()
            self.values[slots] = before + amounts
        return before

    def or_bits(self, slots: np.ndarray, bits: np.ndarray) -> None:
        with self._lock:
            np.bitwise_or.at(self.values, slots, bits)


def exclusive_scan(values, dtype=np.int64, with_total: bool = False) -> np.ndarray:
    """Exclusive prefix sum: ``out[0] = 0``, ``out[t] = sum(values[:t])``.

    With ``with_total`` the grand total is appended, giving ``len+1`` entries
    so that ``out[t]:out[t+1]`` is the interval of element ``t``.
    """
    values = np.asarray(values)
    out = np.zeros(values.shape[0] + 1, dtype=dtype)
    if values.shape[0]:
        info = np.iinfo(dtype)
        if values.dtype.kind == "u" or (values.dtype.kind == "i" and values.min() >= 0):
            total = int(values.sum(dtype=np.uint64))
            if total > info.max:
                raise InputError(f"prefix sum {total} overflows {np.dtype(dtype).name}")
        np.cumsum(values, dtype=dtype, out=out[1:])
    return out if with_total else out[:-1]


def compact(items, keep) -> np.ndarray:
    """Kept items in their original relative order.

    ``keep`` is a boolean mask or a vectorised predicate returning one.
    """
    items = np.asarray(items)
    mask = keep(items) if callable(keep) else keep
    return items[np.asarray(mask, dtype=bool)]


def scatter_with_counters(slots: np.ndarray, values: np.ndarray, offsets: np.ndarray,
                          out: np.ndarray, counters: Optional[CounterArray] = None,
                          workers: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Write ``values[t]`` into the next free cell of interval ``slots[t]``.

    Interval ``s`` is ``out[offsets[s]:offsets[s+1]]``.  Each chunk claims a
    contiguous run inside every interval it touches through one atomic
    fetch-add, so no cell is written twice.  The order inside an interval
    depends on which chunk claims first and is therefore unspecified.
    """
    slots = np.asarray(slots)
    values = np.asarray(values)
    n_intervals = offsets.shape[0] - 1
    if counters is None:
        counters = CounterArray(n_intervals, dtype=np.int64)
    capacity = np.diff(offsets.astype(np.int64))

    def task(lo, hi):
        s = slots[lo:hi]
        order = np.argsort(s, kind="stable")
        s_sorted = s[order]
        uniq, first, counts = np.unique(s_sorted, return_index=True, return_counts=True)
        base = counters.fetch_add(uniq, counts).astype(np.int64)
        if np.any(base + counts > capacity[uniq]):
            raise ConsistencyError("scatter overran an interval; counting pass is inconsistent")
        rank = np.arange(s_sorted.shape[0]) - np.repeat(first, counts)
        dest = offsets[s_sorted].astype(np.int64) + np.repeat(base, counts) + rank
        out[dest] = values[lo:hi][order]

    parallel_for(slots.shape[0], task, workers=workers, chunk=chunk)
    return out
