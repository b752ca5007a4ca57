"""Streaming map driver: buffered reads, per-chromosome filtration, queued stages.

Three layers run concurrently, joined by bounded queues:

1. ingest: FASTQ records are grouped into read buffers;
2. search: one q-group index per buffer, then filtration and validation
   against every chromosome;
3. report: postprocessing and SAM emission, in buffer order.
"""
import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from qgmap.errors import FormatError
from qgmap.filtration import DEFAULT_MAX_HITS, drop_out_of_range, filter_reference
from qgmap.postprocess import (Candidate, MappingRecord, PostprocessConfig, StratumConfig,
                               process_pair, process_single)
from qgmap.qgroup import build_index
from qgmap.refindex import ReferenceIndex
from qgmap.sam import SamHeader, emit_sam
from qgmap.seq import PackedReadText, encode_sequence, pack_reads, reverse_complement_codes
from qgmap.seqio import FastqRecord, read_fastq
from qgmap.validation import BandConfig, validate_hits

log = logging.getLogger(__name__)

DEFAULT_BUFFER_BASES = 10 ** 7


@dataclass
class MapOptions:
    band: BandConfig = field(default_factory=BandConfig)
    mode: StratumConfig = field(default_factory=StratumConfig)
    insert_range: Tuple[int, int] = (0, 1000)
    seed: int = 0
    threads: int = 1
    buffer_bases: int = DEFAULT_BUFFER_BASES
    w: int = 32
    pipelined: bool = True
    queue_capacity: int = 2
    max_hits: int = DEFAULT_MAX_HITS


@dataclass
class Template:
    """One read, or both mates of a pair."""
    id: int
    mates: Tuple[FastqRecord, ...]


@dataclass
class ReadBuffer:
    """Templates searched together; every read is packed in both orientations."""
    index: int
    templates: List[Template]
    capacity: int

    @property
    def bases(self) -> int:
        return 2 * sum(len(m.seq) for t in self.templates for m in t.mates)

    @property
    def m(self) -> int:
        return max((len(m.seq) for t in self.templates for m in t.mates), default=0)


def iter_templates(fastq1, fastq2=None) -> Iterator[Template]:
    if fastq2 is None:
        for i, rec in enumerate(read_fastq(fastq1)):
            yield Template(i, (rec,))
        return
    it1, it2 = read_fastq(fastq1), read_fastq(fastq2)
    i = 0
    for i, (a, b) in enumerate(zip(it1, it2)):
        yield Template(i, (a, b))
    if next(it1, None) is not None or next(it2, None) is not None:
        raise FormatError("paired FASTQ files have different numbers of records")


def fill_buffers(templates: Iterable[Template], capacity: int) -> Iterator[ReadBuffer]:
    """Collect templates until the next one would push the buffer past ``capacity``."""
    batch, size, n = [], 0, 0
    for t in templates:
        t_size = 2 * sum(len(m.seq) for m in t.mates)
        if batch and size + t_size > capacity:
            yield ReadBuffer(n, batch, capacity)
            batch, size, n = [], 0, n + 1
        batch.append(t)
        size += t_size
    if batch:
        yield ReadBuffer(n, batch, capacity)


class Cancelled(Exception):
    pass


class _Failure:
    def __init__(self, exc):
        self.exc = exc


_CLOSED = object()


class StageQueue:
    """Bounded FIFO between two pipeline layers.

    ``put`` blocks while the queue is full; iteration ends at ``close``.  A
    shared cancel event unblocks every waiting producer once any layer fails.
    """

    def __init__(self, capacity: int, cancel: threading.Event):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self._q = queue.Queue(maxsize=capacity)
        self._cancel = cancel

    def put(self, item) -> None:
        while True:
            if self._cancel.is_set():
                raise Cancelled()
            try:
                self._q.put(item, timeout=0.05)
                return
            except queue.Full:
                continue

    def close(self) -> None:
        self.put(_CLOSED)

    def fail(self, exc: BaseException) -> None:
        """Deliver ``exc`` to the consumer after the items already queued."""
        try:
            self.put(_Failure(exc))
        except Cancelled:
            pass

    def __iter__(self):
        while True:
            try:
                item = self._q.get(timeout=0.05)
            except queue.Empty:
                if self._cancel.is_set():
                    raise Cancelled()
                continue
            if item is _CLOSED:
                return
            if isinstance(item, _Failure):
                raise item.exc
            yield item


# --- search layer --------------------------------------------------------------

def _encode_mate(seq: str, seed: int, template_id: int, mate: int) -> np.ndarray:
    rng = np.random.default_rng([seed, template_id, mate])
    return encode_sequence(seq, rng)


@dataclass
class BufferResult:
    buffer: ReadBuffer
    text: PackedReadText
    candidates: List[List[List[Candidate]]]  # [template][mate] -> hits


def entry_id(local_template: int, n_mates: int, mate: int, strand: int) -> int:
    return (local_template * n_mates + mate) * 2 + strand


def encode_buffer(buf: ReadBuffer, seed: int) -> PackedReadText:
    entries = []
    for t in buf.templates:
        for j, mate in enumerate(t.mates):
            fwd = _encode_mate(mate.seq, seed, t.id, j)
            entries += [fwd, reverse_complement_codes(fwd)]
    return pack_reads(entries, buf.m)


def search_buffer(buf: ReadBuffer, ref: ReferenceIndex, opts: MapOptions) -> BufferResult:
    n_mates = len(buf.templates[0].mates) if buf.templates else 1
    text = encode_buffer(buf, opts.seed)
    cands = [[[] for _ in range(n_mates)] for _ in buf.templates]
    if text.read_count == 0 or text.m < ref.q:
        return BufferResult(buf, text, cands)
    index = build_index(text, q=ref.q, w=opts.w, workers=opts.threads)
    for ci, chrom in enumerate(ref.chromosomes):
        hits = filter_reference(chrom.codes, chrom.positions, index, text.m,
                                workers=opts.threads, max_hits=opts.max_hits)
        hits = drop_out_of_range(hits, chrom.length, opts.band.band_width)
        valid = validate_hits(hits, text, chrom.sequence(), opts.band, workers=opts.threads)
        log.debug("buffer %d %s: %d hits, %d validated", buf.index, chrom.name,
                  len(hits), len(valid))
        for v in valid:
            entry = v.r
            local, rest = divmod(entry, 2 * n_mates)
            mate, strand = divmod(rest, 2)
            cands[local][mate].append(Candidate(ci, strand, v.ref_start, v.k, v.read_len, v.d))
    return BufferResult(buf, text, cands)


# --- report layer --------------------------------------------------------------

def report_buffer(result: BufferResult, refs: Sequence[np.ndarray],
                  cfg: PostprocessConfig) -> List[MappingRecord]:
    buf, text = result.buffer, result.text
    out = []
    for local, t in enumerate(buf.templates):
        n_mates = len(t.mates)
        orient = [(text.read(entry_id(local, n_mates, j, 0)),
                   text.read(entry_id(local, n_mates, j, 1))) for j in range(n_mates)]
        if n_mates == 1:
            recs = process_single(t.id, result.candidates[local][0], orient[0], refs, cfg)
        else:
            recs = process_pair(t.id, result.candidates[local][0], result.candidates[local][1],
                                orient[0], orient[1], refs, cfg)
        for rec in recs:
            mate = t.mates[rec.mate]
            rec.name, rec.seq, rec.qual = mate.name, mate.seq, mate.qual
        out += recs
    return out


def sam_header(ref: ReferenceIndex, opts: MapOptions, command_line: str = "") -> SamHeader:
    comments = [f"qgmap q={ref.q} w={opts.w} band={opts.band.band_width} "
                f"identity={opts.band.identity_threshold:g} mode={opts.mode.mode} "
                f"reference_seed={ref.seed} read_seed={opts.seed}"]
    return SamHeader([(c.name, c.length) for c in ref.chromosomes], command_line, comments)


def run_pipeline(ref: ReferenceIndex, templates: Iterable[Template], opts: MapOptions,
                 sink: IO[str], command_line: str = "") -> int:
    """Map ``templates`` and write SAM to ``sink``; returns the record count."""
    cfg = PostprocessConfig(mode=opts.mode, insert_range=opts.insert_range,
                            p_size=max(1, ref.total_positions), band_width=opts.band.band_width)
    refs = [c.sequence() for c in ref.chromosomes]
    header = sam_header(ref, opts, command_line)
    emit_sam([], header, sink)
    buffers = fill_buffers(templates, opts.buffer_bases)
    n = 0
    if not opts.pipelined:
        for buf in buffers:
            n += emit_sam(report_buffer(search_buffer(buf, ref, opts), refs, cfg), header,
                          sink, write_header=False)
        return n

    cancel = threading.Event()
    q_in = StageQueue(opts.queue_capacity, cancel)
    q_out = StageQueue(opts.queue_capacity, cancel)

    def ingest():
        try:
            for buf in buffers:
                q_in.put(buf)
            q_in.close()
        except Cancelled:
            pass
        except BaseException as exc:
            q_in.fail(exc)

    def search():
        try:
            for buf in q_in:
                q_out.put(search_buffer(buf, ref, opts))
            q_out.close()
        except Cancelled:
            pass
        except BaseException as exc:
            q_out.fail(exc)

    workers = [threading.Thread(target=ingest, name="qgmap-ingest", daemon=True),
               threading.Thread(target=search, name="qgmap-search", daemon=True)]
    for th in workers:
        th.start()
    try:
        for result in q_out:
            n += emit_sam(report_buffer(result, refs, cfg), header, sink, write_header=False)
    finally:
        cancel.set()
        for th in workers:
            th.join()
    return n
