"""Stream reference q-grams against the read-side index to produce hits.

A hit ``(d, r)`` says read ``r`` may start at reference position ``d``: some
q-gram at reference position ``p`` also occurs at offset ``o`` of read ``r``,
so ``d = p - o`` (possibly negative near the chromosome start).
"""
from dataclasses import dataclass

import numpy as np

from qgmap import dataparallel as dp
from qgmap.errors import HitOverflowError
from qgmap.qgroup import QGroupIndex

DEFAULT_MAX_HITS = 1 << 28


@dataclass(frozen=True)
class Hits:
    d: np.ndarray
    r: np.ndarray

    def __len__(self):
        return int(self.d.shape[0])

    def __iter__(self):
        return zip(self.d.tolist(), self.r.tolist())

    def take(self, mask_or_idx) -> "Hits":
        return Hits(self.d[mask_or_idx], self.r[mask_or_idx])

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def filter_reference(codes: np.ndarray, positions: np.ndarray, index: QGroupIndex, m: int,
                     workers: int = 1, max_hits: int = DEFAULT_MAX_HITS,
                     chunk: int = dp.DEFAULT_CHUNK) -> Hits:
    """One hit per (reference position, matching read-text occurrence).

    ``codes``/``positions`` are the reference position set P with its q-gram
    codes.  Positions are processed in the given (code-sorted) order.
    """
    codes = np.asarray(codes)
    positions = np.asarray(positions, dtype=np.int64)
    if codes.shape[0] == 0:
        return Hits.empty()

    # count pass
    k_start = np.empty(codes.shape[0], dtype=np.int64)
    k_end = np.empty(codes.shape[0], dtype=np.int64)

    def count(lo, hi):
        k_start[lo:hi], k_end[lo:hi] = index.index_pairs(codes[lo:hi])

    dp.parallel_for(codes.shape[0], count, workers, chunk)
    counts = k_end - k_start

    # drop positions without hits, then lay out output intervals
    keep = counts > 0
    p_kept = dp.compact(positions, keep)
    start_kept = dp.compact(k_start, keep)
    counts = dp.compact(counts, keep)
    C = dp.exclusive_scan(counts, dtype=np.int64, with_total=True)
    total = int(C[-1])
    if total > max_hits:
        raise HitOverflowError(f"filtration would emit {total} hits (cap {max_hits}); "
                               "use a smaller read buffer")
    d = np.empty(total, dtype=np.int64)
    r = np.empty(total, dtype=np.int64)
    O = index.O

    def emit(lo, hi):
        c = counts[lo:hi]
        base = int(C[lo])
        n = int(C[hi]) - base
        owner = np.repeat(np.arange(lo, hi), c)
        k = np.arange(n) - (C[owner] - base)
        p_read = O[start_kept[owner] + k].astype(np.int64)
        r[base:base + n] = p_read // m
        d[base:base + n] = p_kept[owner] - p_read % m

    dp.parallel_for(p_kept.shape[0], emit, workers, chunk)
    return Hits(d, r)


def drop_out_of_range(hits: Hits, chrom_length: int, slack: int) -> Hits:
    """Discard diagonals below ``-slack`` or at/after the chromosome end."""
    ok = (hits.d >= -slack) & (hits.d < chrom_length)
    return hits.take(ok)
