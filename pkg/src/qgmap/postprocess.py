"""Turn validated hits of one read (or read pair) into mapping records."""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import groupby
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

BEST_STRATUM = "best-stratum"
ALL = "all"
MODES = (BEST_STRATUM, ALL)
MAX_MAPQ = 255


class Candidate(NamedTuple):
    """A validated hit of one read on one chromosome and strand."""
    chrom: int
    strand: int  # 0 forward, 1 reverse
    ref_start: int
    k: int
    read_len: int
    d: int = 0

    @property
    def identity(self) -> float:
        return (self.read_len - self.k) / self.read_len

    @property
    def matches(self) -> Fraction:
        return Fraction(self.read_len - self.k, self.read_len)


@dataclass(frozen=True)
class StratumConfig:
    mode: str = BEST_STRATUM

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class MappingRecord:
    read_id: int
    mate: int = 0                   # 0 single/first, 1 second
    chrom: Optional[int] = None     # None = unmapped
    pos: int = 0                    # 0-based leftmost reference position
    strand: int = 0
    identity: float = 0.0
    k: int = 0
    stratum: int = 0
    hit_rank: int = 0
    mapq: int = 0
    cigar: str = "*"
    nm: int = 0
    secondary: bool = False
    paired: bool = False
    proper_pair: bool = False
    mate_chrom: Optional[int] = None
    mate_pos: int = 0
    mate_strand: int = 0
    mate_unmapped: bool = True
    tlen: int = 0
    name: str = "*"
    seq: str = "*"
    qual: str = "*"

    @property
    def mapped(self) -> bool:
        return self.chrom is not None

    def ref_span(self) -> int:
        return cigar_ref_length(self.cigar) if self.mapped else 0


def _tie_key(c: Candidate):
    return (c.chrom, c.ref_start, c.strand)


def dedup_hits(hits: Sequence[Candidate]) -> List[Candidate]:
    """At most one hit per (chromosome, strand, start), keeping the smallest k."""
    best = {}
    for h in hits:
        key = (h.chrom, h.strand, h.ref_start)
        cur = best.get(key)
        if cur is None or (h.k, h.d) < (cur.k, cur.d):
            best[key] = h
    return sort_hits(best.values())


def sort_hits(hits) -> List[Candidate]:
    """Non-increasing identity, ties by (chromosome, position, strand)."""
    return sorted(hits, key=lambda h: (-h.matches, _tie_key(h)))


def hit_rank(scores: Sequence) -> List[int]:
    """For each score, how many scores are >= it (itself included)."""
    ordered = sorted(scores, reverse=True)
    out = []
    for s in scores:
        lo, hi = 0, len(ordered)
        while lo < hi:  # first index whose score is < s
            mid = (lo + hi) // 2
            if ordered[mid] >= s:
                lo = mid + 1
            else:
                hi = mid
        out.append(lo)
    return out


def mapping_quality(rank: int, p_size: int) -> int:
    """PHRED-scaled ``(rank - 1) / p_size``, rounded half up into [0, 255]."""
    if rank < 1 or p_size < 1:
        raise ValueError("rank and p_size must be >= 1")
    if rank == 1:
        return MAX_MAPQ
    value = -10.0 * math.log10((rank - 1) / p_size)
    value = round(value, 9)  # keep exact powers of ten on their integer
    return int(max(0, min(MAX_MAPQ, math.floor(value + 0.5))))


def strata_indices(scores: Sequence) -> List[int]:
    levels = sorted(set(scores), reverse=True)
    where = {s: i for i, s in enumerate(levels)}
    return [where[s] for s in scores]


def stratify(hits: Sequence, mode: StratumConfig, score=lambda h: h.matches) -> list:
    """Best-stratum keeps the hits tied with the best score; all keeps everything."""
    hits = list(hits)
    if mode.mode == ALL or not hits:
        return hits
    top = max(score(h) for h in hits)
    return [h for h in hits if score(h) == top]


def outer_distance(fwd: Candidate, rev: Candidate) -> int:
    """Signed distance from the forward mate's start to the reverse mate's end."""
    return rev.ref_start + rev.read_len - fwd.ref_start


def is_proper_pair(a: Candidate, b: Candidate, insert_range: Tuple[int, int]) -> bool:
    if a.chrom != b.chrom or a.strand == b.strand:
        return False
    fwd, rev = (a, b) if a.strand == 0 else (b, a)
    return insert_range[0] <= outer_distance(fwd, rev) <= insert_range[1]


def pair_mates(hits_r1: Sequence[Candidate], hits_r2: Sequence[Candidate],
               insert_range: Tuple[int, int]):
    """Greedy best-first pairing.

    Returns ``(pairs, singles_r1, singles_r2)``; every hit is used by at most
    one pair and pairs come out ordered by non-increasing summed identity.
    """
    options = [(a, b) for a in hits_r1 for b in hits_r2 if is_proper_pair(a, b, insert_range)]
    options.sort(key=lambda p: (-(p[0].matches + p[1].matches), _tie_key(p[0]), _tie_key(p[1])))
    used1, used2, pairs = set(), set(), []
    for a, b in options:
        if a in used1 or b in used2:
            continue
        used1.add(a)
        used2.add(b)
        pairs.append((a, b))
    singles1 = [h for h in hits_r1 if h not in used1]
    singles2 = [h for h in hits_r2 if h not in used2]
    return pairs, singles1, singles2


# --- alignment ---------------------------------------------------------------

def _semi_global_matrix(read: np.ndarray, window: np.ndarray) -> np.ndarray:
    n, W = read.shape[0], window.shape[0]
    D = np.empty((n + 1, W + 1), dtype=np.int32)
    D[0] = 0
    ar = np.arange(W + 1, dtype=np.int32)
    for i in range(1, n + 1):
        cand = D[i - 1] + 1
        np.minimum(cand[1:], D[i - 1, :-1] + (window != read[i - 1]), out=cand[1:])
        D[i] = np.minimum.accumulate(cand - ar) + ar
    return D


def _collapse(ops: List[str]) -> str:
    return "".join(f"{len(list(g))}{op}" for op, g in groupby(ops))


def traceback_cigar(read: np.ndarray, ref: np.ndarray, ref_start: int,
                    k_expected: Optional[int] = None, band_width: int = 32):
    """Optimal semi-global alignment near ``ref_start``.

    The search window is the validated placement widened by ``band_width`` on
    either side, which also picks up indels the band could not hold.  Returns
    ``(cigar, start, edits)``; ``start`` may differ from ``ref_start`` when a
    better placement exists.  Match and mismatch are both reported as M.
    """
    read = np.asarray(read)
    n = read.shape[0]
    ws = max(0, ref_start - band_width)
    we = min(ref.shape[0], ref_start + n + band_width)
    window = np.asarray(ref[ws:we])
    D = _semi_global_matrix(read, window)
    # the largest optimal end avoids a trailing insertion where a mismatch
    # or deletion costs the same
    edits = int(D[n].min())
    j = int(np.flatnonzero(D[n] == edits)[-1])
    i, ops = n, []
    while i > 0:
        here = D[i, j]
        if j > 0 and here == D[i - 1, j - 1] + (read[i - 1] != window[j - 1]):
            ops.append("M")
            i, j = i - 1, j - 1
        elif j > 0 and here == D[i, j - 1] + 1:
            ops.append("D")
            j -= 1
        else:
            ops.append("I")
            i -= 1
    ops.reverse()
    return _collapse(ops), ws + j, edits


def cigar_ops(cigar: str):
    num = ""
    for ch in cigar:
        if ch.isdigit():
            num += ch
        else:
            yield int(num), ch
            num = ""


def cigar_ref_length(cigar: str) -> int:
    return sum(n for n, op in cigar_ops(cigar) if op in "MD=XN")


def cigar_read_length(cigar: str) -> int:
    return sum(n for n, op in cigar_ops(cigar) if op in "MI=XS")


# --- per-read driver ---------------------------------------------------------

@dataclass
class PostprocessConfig:
    mode: StratumConfig = field(default_factory=StratumConfig)
    insert_range: Tuple[int, int] = (0, 1000)
    p_size: int = 1
    band_width: int = 32


def _annotate(hits: List[Candidate], p_size: int):
    """(hit, rank, stratum, mapq) for deduped, sorted hits of one mate."""
    scores = [h.matches for h in hits]
    ranks = hit_rank(scores)
    strata = strata_indices(scores)
    return {h: (r, s, mapping_quality(r, p_size)) for h, r, s in zip(hits, ranks, strata)}


def _record(read_id, mate, hit, info, reads, refs, cfg) -> MappingRecord:
    rank, stratum, mapq = info
    read = reads[hit.strand]
    cigar, pos, edits = traceback_cigar(read, refs[hit.chrom], hit.ref_start, hit.k,
                                        cfg.band_width)
    return MappingRecord(read_id=read_id, mate=mate, chrom=hit.chrom, pos=pos,
                         strand=hit.strand, identity=hit.identity, k=hit.k,
                         stratum=stratum, hit_rank=rank, mapq=mapq, cigar=cigar, nm=edits)


def _drop_aligned_duplicates(records: List[MappingRecord]) -> List[MappingRecord]:
    seen, out = set(), []
    for rec in records:
        key = (rec.chrom, rec.strand, rec.pos, rec.cigar)
        if key not in seen:
            seen.add(key)
            out.append(rec)
    return out


def process_single(read_id: int, hits: Sequence[Candidate], reads, refs,
                   cfg: PostprocessConfig, mate: int = 0) -> List[MappingRecord]:
    """Records for one unpaired read; ``reads`` = (forward codes, reverse-complement codes)."""
    hits = dedup_hits(hits)
    if not hits:
        return [MappingRecord(read_id=read_id, mate=mate)]
    info = _annotate(hits, cfg.p_size)
    kept = stratify(hits, cfg.mode)
    records = _drop_aligned_duplicates(
        [_record(read_id, mate, h, info[h], reads, refs, cfg) for h in kept])
    for i, rec in enumerate(records):
        rec.secondary = i > 0
    return records


def _link(a: MappingRecord, b: MappingRecord, proper: bool):
    for x, y in ((a, b), (b, a)):
        x.paired = True
        x.proper_pair = proper
        x.mate_unmapped = not y.mapped
        x.mate_chrom, x.mate_pos, x.mate_strand = y.chrom, y.pos, y.strand
    if proper or (a.mapped and b.mapped and a.chrom == b.chrom):
        left = min(a.pos, b.pos)
        right = max(a.pos + a.ref_span(), b.pos + b.ref_span())
        length = right - left
        first = a if (a.pos, a.mate) <= (b.pos, b.mate) else b
        for x in (a, b):
            x.tlen = length if x is first else -length


def process_pair(read_id: int, hits1: Sequence[Candidate], hits2: Sequence[Candidate],
                 reads1, reads2, refs, cfg: PostprocessConfig) -> List[MappingRecord]:
    """Records for a read pair: proper pairs ranked by summed identity, then singletons."""
    hits1, hits2 = dedup_hits(hits1), dedup_hits(hits2)
    info1, info2 = _annotate(hits1, cfg.p_size), _annotate(hits2, cfg.p_size)
    pairs, singles1, singles2 = pair_mates(hits1, hits2, cfg.insert_range)
    out: List[MappingRecord] = []
    if pairs:
        pairs = stratify(pairs, cfg.mode, score=lambda p: p[0].matches + p[1].matches)
        if cfg.mode.mode == BEST_STRATUM:
            singles1, singles2 = [], []
        for n, (a, b) in enumerate(pairs):
            ra = _record(read_id, 0, a, info1[a], reads1, refs, cfg)
            rb = _record(read_id, 1, b, info2[b], reads2, refs, cfg)
            ra.secondary = rb.secondary = n > 0
            _link(ra, rb, proper=True)
            out += [ra, rb]
    else:
        singles1 = stratify(singles1, cfg.mode)
        singles2 = stratify(singles2, cfg.mode)
    rest1 = [_record(read_id, 0, h, info1[h], reads1, refs, cfg) for h in singles1]
    rest2 = [_record(read_id, 1, h, info2[h], reads2, refs, cfg) for h in singles2]
    if not rest1 and not any(r.mate == 0 for r in out):
        rest1 = [MappingRecord(read_id=read_id, mate=0)]
    if not rest2 and not any(r.mate == 1 for r in out):
        rest2 = [MappingRecord(read_id=read_id, mate=1)]
    have_primary = {r.mate for r in out}
    for mate, rest in ((0, rest1), (1, rest2)):
        for i, rec in enumerate(rest):
            rec.secondary = mate in have_primary or i > 0
    primary1 = next(r for r in out + rest1 if r.mate == 0 and not r.secondary)
    primary2 = next(r for r in out + rest2 if r.mate == 1 and not r.secondary)
    for rec in rest1:
        _link_single(rec, primary2)
    for rec in rest2:
        _link_single(rec, primary1)
    return out + rest1 + rest2


def _link_single(rec: MappingRecord, mate_primary: MappingRecord):
    rec.paired = True
    rec.proper_pair = False
    rec.mate_unmapped = not mate_primary.mapped
    if mate_primary.mapped:
        rec.mate_chrom, rec.mate_pos, rec.mate_strand = (
            mate_primary.chrom, mate_primary.pos, mate_primary.strand)
    elif rec.mapped:
        # unmapped mate is placed next to this one, as SAM consumers expect
        rec.mate_chrom, rec.mate_pos = rec.chrom, rec.pos
