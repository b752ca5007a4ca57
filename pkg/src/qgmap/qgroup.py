"""The q-group index: a q-gram index with a bitmask layer in front.

All ``4**q`` q-gram codes are cut into groups of ``w`` consecutive codes.
``I[i]`` has bit ``j`` set iff code ``i*w + j`` occurs in the text; ``S[i]``
is the number of occurring codes in groups before ``i``; ``S_prime`` maps the
dense rank of each occurring code to its run in ``O``; ``O`` lists text
positions grouped by code.  Lookups cost two popcounts and four reads.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from qgmap import dataparallel as dp
from qgmap.errors import InputError
from qgmap.seq import PackedReadText, check_q

_WORD_DTYPES = {32: np.uint32, 64: np.uint64}


def group_and_bit(g, w: int = 32):
    """(group, bit) of q-gram code ``g``; works on ints and arrays."""
    if isinstance(g, np.ndarray):
        shift = w.bit_length() - 1
        return g >> shift, g & (w - 1)
    return g // w, g % w


def _popcount(x):
    return np.bitwise_count(x)


def grouprank(I: np.ndarray, i, j):
    """Number of set bits of ``I[i]`` strictly below bit ``j``."""
    word = I[i]
    one = word.dtype.type(1)
    if isinstance(j, np.ndarray):
        mask = (one << j.astype(word.dtype)) - one
        return _popcount(word & mask).astype(np.int64)
    mask = (one << word.dtype.type(j)) - one
    return int(_popcount(word & mask))


@dataclass(frozen=True)
class QGroupIndex:
    I: np.ndarray
    S: np.ndarray
    S_prime: np.ndarray
    O: np.ndarray
    q: int
    w: int = 32
    sampled: bool = False

    @property
    def n_groups(self) -> int:
        return int(self.I.shape[0])

    @property
    def n_distinct(self) -> int:
        return int(self.S_prime.shape[0]) - 1

    def group_base(self, i):
        """``S[i]``, recomputed with one extra popcount for odd groups when sampled."""
        if not self.sampled:
            return self.S[i]
        if isinstance(i, np.ndarray):
            odd = (i & 1).astype(bool)
            prev = self.I[np.maximum(i - 1, 0)]
            return self.S[i >> 1] + np.where(odd, _popcount(prev), 0).astype(self.S.dtype)
        base = int(self.S[i >> 1])
        if i & 1:
            base += int(_popcount(self.I[i - 1]))
        return base

    def index_pairs(self, codes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorised lookup: ``(k_start, k_end)`` per code, ``(0, 0)`` when absent."""
        codes = np.asarray(codes, dtype=np.uint64)
        if codes.size == 0 or self.n_distinct == 0:
            z = np.zeros(codes.shape[0], dtype=np.int64)
            return z, z.copy()
        i, j = group_and_bit(codes, self.w)
        i = i.astype(np.int64)
        word = self.I[i]
        wd = word.dtype.type
        present = ((word >> j.astype(word.dtype)) & wd(1)).astype(bool)
        rank = _popcount(word & ((wd(1) << j.astype(word.dtype)) - wd(1))).astype(np.int64)
        slot = self.group_base(i).astype(np.int64) + rank
        slot = np.where(present, slot, 0)
        k_start = np.where(present, self.S_prime[slot], 0).astype(np.int64)
        k_end = np.where(present, self.S_prime[slot + 1], 0).astype(np.int64)
        return k_start, k_end

    def index_pair(self, g: int) -> Optional[Tuple[int, int]]:
        """Half-open run of ``O`` holding the occurrences of ``g``, or None."""
        if not 0 <= g < 4 ** self.q:
            raise InputError(f"q-gram code {g} out of range for q={self.q}")
        i, j = group_and_bit(g, self.w)
        word = int(self.I[i])
        if word == 0 or not (word >> j) & 1:
            return None
        slot = int(self.group_base(i)) + (word & ((1 << j) - 1)).bit_count()
        return int(self.S_prime[slot]), int(self.S_prime[slot + 1])

    def occurrences(self, g: int) -> np.ndarray:
        pair = self.index_pair(g)
        if pair is None:
            return np.zeros(0, dtype=self.O.dtype)
        return self.O[pair[0]:pair[1]]

    def size_words(self) -> int:
        """Allocated entries over all four arrays."""
        return sum(int(a.shape[0]) for a in (self.I, self.S, self.S_prime, self.O))

    def debug_dump(self) -> str:
        """Lengths and CRC32 checksums of the four arrays, one per line."""
        import zlib
        lines = [f"q={self.q} w={self.w} sampled={self.sampled}"]
        for name in ("I", "S", "S_prime", "O"):
            a = np.ascontiguousarray(getattr(self, name))
            lines.append(f"{name} len={a.shape[0]} crc32={zlib.crc32(a.tobytes()):08x}")
        return "\n".join(lines)


def group_count(q: int, w: int) -> int:
    return max(1, -(-(4 ** q) // w))


def build_index(text: PackedReadText, q: int = 16, w: int = 32,
                workers: int = 1, chunk: int = dp.DEFAULT_CHUNK) -> QGroupIndex:
    """Build the index over the valid q-grams of ``text``.

    Passes: set occurrence bits, popcount, scan into S, count per code, scan
    into S', scatter positions into O.
    """
    check_q(q)
    if w not in _WORD_DTYPES:
        raise InputError(f"group width w must be 32 or 64, got {w}")
    if 2 * q > 64:
        raise InputError("2q must fit a machine word")
    if len(text) >= 2 ** 32:
        raise InputError("read text too large for 32-bit positions")
    word_t = _WORD_DTYPES[w]
    positions, codes = text.qgrams(q)
    n = positions.shape[0]
    gi, gj = group_and_bit(codes.astype(np.int64), w)

    I = dp.CounterArray(group_count(q, w), dtype=word_t)

    def set_bits(lo, hi):
        I.or_bits(gi[lo:hi], word_t(1) << gj[lo:hi].astype(word_t))

    dp.parallel_for(n, set_bits, workers, chunk)
    I = I.values

    S = dp.exclusive_scan(_popcount(I), dtype=np.uint32, with_total=True)
    n_distinct = int(S[-1])

    slots = np.empty(n, dtype=np.int64)

    def rank_pass(lo, hi):
        i = gi[lo:hi]
        slots[lo:hi] = S[i].astype(np.int64) + grouprank(I, i, gj[lo:hi])

    dp.parallel_for(n, rank_pass, workers, chunk)
    counts = dp.CounterArray(n_distinct, dtype=np.uint32)
    dp.parallel_for(n, lambda lo, hi: counts.add(slots[lo:hi]), workers, chunk)
    S_prime = dp.exclusive_scan(counts.values, dtype=np.uint32, with_total=True)

    O = np.zeros(n, dtype=np.uint32)
    dp.scatter_with_counters(slots, positions.astype(np.uint32), S_prime, O,
                             workers=workers, chunk=chunk)
    for a in (I, S, S_prime, O):
        a.flags.writeable = False
    return QGroupIndex(I=I, S=S, S_prime=S_prime, O=O, q=q, w=w)


def index_pair(index: QGroupIndex, g: int):
    return index.index_pair(g)


def occurrences(index: QGroupIndex, g: int) -> np.ndarray:
    return index.occurrences(g)


def sample_S(index: QGroupIndex) -> QGroupIndex:
    """Keep only the even entries of S; odd groups pay one extra popcount."""
    if index.sampled:
        return index
    S = np.ascontiguousarray(index.S[0::2])
    S.flags.writeable = False
    return QGroupIndex(I=index.I, S=S, S_prime=index.S_prime, O=index.O,
                       q=index.q, w=index.w, sampled=True)


def index_size_words(q: int, text_len: int, w: int = 32):
    """Word counts of the q-group index and a classic q-gram index, and their ratio.

    Returns ``(qgroup_words, classic_words, qgroup_words / classic_words)``.
    """
    n_codes = 4 ** q
    qgroup = math.ceil(2 * n_codes / w) + min(n_codes, text_len) + text_len
    classic = n_codes + text_len
    return qgroup, classic, qgroup / classic
