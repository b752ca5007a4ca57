"""Banded bit-parallel validation of candidate hits.

Each hit is checked with a Myers/Hyyrö bit-vector edit-distance computation
restricted to a diagonal band of ``band_width`` diagonals around the hit
diagonal.  The band is held in one machine word per column: bit ``b`` of the
word at step ``t`` stands for read row ``t + b - band_width + 1``, so moving
to the next column is a right shift.  Rows above the read (row <= 0) match
every symbol, which pins them to distance 0 and gives the free start of a
semi-global alignment.  Reference columns outside the chromosome match
nothing; aligning against them costs the same as an insertion, so clamped
windows need no special case.

The scan runs over the reversed read and the reversed reference, which makes
the minimum over "end" columns a minimum over alignment *start* positions.
All hits of a chunk advance in lockstep, one numpy lane per hit.
"""
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from qgmap import dataparallel as dp
from qgmap.errors import InputError
from qgmap.filtration import Hits
from qgmap.seq import PackedReadText, encode_sequence

WORD_BITS = 64
VALIDATION_CHUNK = 16384


@dataclass(frozen=True)
class BandConfig:
    band_width: int = 32
    identity_threshold: float = 0.80

    def __post_init__(self):
        if not 1 <= self.band_width <= WORD_BITS:
            raise InputError(f"band_width must be in 1..{WORD_BITS}")
        if not 0.0 <= self.identity_threshold <= 1.0:
            raise InputError("identity_threshold must be a fraction in [0, 1]")

    @property
    def slack(self) -> int:
        return self.band_width // 2

    def max_errors(self, read_len: int) -> int:
        """Largest k with ``(read_len - k) / read_len >= identity_threshold``."""
        return read_len - math.ceil(self.identity_threshold * read_len - 1e-9)


class ValidatedHit(NamedTuple):
    r: int
    ref_start: int
    k: int
    read_len: int
    d: int

    @property
    def identity(self) -> float:
        return (self.read_len - self.k) / self.read_len


@dataclass(frozen=True)
class ValidatedHits:
    r: np.ndarray
    ref_start: np.ndarray
    k: np.ndarray
    read_len: np.ndarray
    d: np.ndarray

    def __len__(self):
        return int(self.r.shape[0])

    @property
    def identity(self) -> np.ndarray:
        return (self.read_len - self.k) / self.read_len

    def __iter__(self) -> Iterator[ValidatedHit]:
        cols = (self.r.tolist(), self.ref_start.tolist(), self.k.tolist(),
                self.read_len.tolist(), self.d.tolist())
        return (ValidatedHit(*row) for row in zip(*cols))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z, z, z, z)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("r", "ref_start", "k", "read_len", "d")))


def _match_table(rev_reads: np.ndarray, B: int, word) -> np.ndarray:
    """Band-aligned match masks, shape ``(reads, 5, n + B - 1)``.

    Entry ``[x, c, t-1]`` has bit ``b`` set iff row ``t + b - B + 1`` of the
    (reversed) read matches code ``c``; code 4 is the off-chromosome symbol.
    """
    R, n = rev_reads.shape
    T = n + B - 1
    ext = np.zeros((R, 5, n + 2 * B - 2), dtype=bool)
    ext[:, :, :B - 1] = True
    for c in range(4):
        ext[:, c, B - 1:B - 1 + n] = rev_reads == c
    tab = np.zeros((R, 5, T), dtype=word)
    for b in range(B):
        tab |= ext[:, :, b:b + T].astype(word) << word(b)
    return tab


def _banded_scan(rev_reads: np.ndarray, read_idx: np.ndarray, ref: np.ndarray,
                 diag: np.ndarray, B: int):
    """Best (k, start) per hit; rows of ``rev_reads`` all have one length n."""
    n = rev_reads.shape[1]
    L = ref.shape[0]
    word = np.uint32 if B <= 32 else np.uint64
    wd = word
    mask = wd((1 << B) - 1)
    top = wd(1 << (B - 1))
    one = wd(1)
    hi_shift = wd(B - 1)
    tab = _match_table(rev_reads, B, word)
    T = n + B - 1
    N = read_idx.shape[0]

    VP = np.zeros(N, dtype=word)
    VN = np.zeros(N, dtype=word)
    bottom = np.zeros(N, dtype=np.int64)
    best = np.full(N, np.iinfo(np.int64).max, dtype=np.int64)
    best_start = np.zeros(N, dtype=np.int64)
    pos0 = n + diag - B // 2 + B - 1
    ref_ext = np.append(ref.astype(np.uint8), np.uint8(4))

    for t in range(1, T + 1):
        pos = pos0 - t
        col = np.where((pos >= 0) & (pos < L), pos, L)
        Eq = tab[read_idx, ref_ext[col], t - 1]
        VP = (VP >> one) | top
        VN = VN >> one
        D0 = ((((Eq & VP) + VP) & mask) ^ VP) | Eq | VN
        HP = VN | (~(D0 | VP) & mask)
        HN = VP & D0
        bottom += (((D0 >> hi_shift) & one) ^ one).astype(np.int64)
        HPs = ((HP << one) | one) & mask
        HNs = (HN << one) & mask
        VP = HNs | (~(D0 | HPs) & mask)
        VN = HPs & D0
        if t >= n:
            row_bit = n - t + B - 1
            if row_bit < B - 1:
                below = wd(((1 << B) - 1) ^ ((1 << (row_bit + 1)) - 1))
                score = (bottom - np.bitwise_count(VP & below).astype(np.int64)
                         + np.bitwise_count(VN & below).astype(np.int64))
            else:
                score = bottom
            better = score <= best
            best = np.where(better, score, best)
            best_start = np.where(better, np.clip(pos, 0, L), best_start)
    return best, best_start


def myers_banded(read, ref_window, band: Optional[BandConfig] = None, diag_lo: int = 0):
    """Banded semi-global edit distance of ``read`` inside ``ref_window``.

    The band covers window diagonals ``diag_lo .. diag_lo + band_width - 1``
    (diagonal = window offset of the read start).  Returns ``(k, start_offset)``
    with the smallest start among equally good alignments.
    """
    band = band or BandConfig()
    read = encode_sequence(read)
    window = encode_sequence(ref_window)
    if read.shape[0] == 0:
        raise InputError("cannot align an empty read")
    k, start = _banded_scan(read[::-1][None, :], np.zeros(1, dtype=np.int64), window,
                            np.array([diag_lo + band.slack], dtype=np.int64), band.band_width)
    return int(k[0]), int(start[0])


def banded_distances(text: PackedReadText, hits: Hits, ref: np.ndarray,
                     band: BandConfig, workers: int = 1, chunk: int = VALIDATION_CHUNK):
    """(k, ref_start) for every hit, in input order."""
    N = len(hits)
    k_out = np.zeros(N, dtype=np.int64)
    s_out = np.zeros(N, dtype=np.int64)
    if N == 0:
        return k_out, s_out
    # identical (d, r) pairs come from clusters of q-grams; compute each once
    keys = np.stack([hits.r, hits.d], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    ur, ud = uniq[:, 0], uniq[:, 1]
    lengths = text.read_lengths[ur]
    uk = np.zeros(ur.shape[0], dtype=np.int64)
    us = np.zeros(ur.shape[0], dtype=np.int64)

    def task(lo, hi):
        r, d, ln = ur[lo:hi], ud[lo:hi], lengths[lo:hi]
        for n in np.unique(ln):
            sel = np.flatnonzero(ln == n)
            reads, idx = np.unique(r[sel], return_inverse=True)
            rev = np.stack([text.read(int(x))[::-1] for x in reads])
            k, s = _banded_scan(rev, idx.reshape(-1), ref, d[sel], band.band_width)
            uk[lo + sel], us[lo + sel] = k, s

    dp.parallel_for(ur.shape[0], task, workers, chunk)
    return uk[inverse], us[inverse]


def validate_hits(hits: Hits, text: PackedReadText, ref: np.ndarray,
                  band: Optional[BandConfig] = None, workers: int = 1) -> ValidatedHits:
    """Keep hits whose banded identity reaches the threshold, in input order."""
    band = band or BandConfig()
    k, start = banded_distances(text, hits, ref, band, workers)
    n = text.read_lengths[hits.r] if len(hits) else np.zeros(0, dtype=np.int64)
    max_k = n - np.ceil(band.identity_threshold * n - 1e-9).astype(np.int64)
    keep = k <= max_k
    return ValidatedHits(r=hits.r[keep], ref_start=start[keep], k=k[keep],
                         read_len=n[keep].astype(np.int64), d=hits.d[keep])
