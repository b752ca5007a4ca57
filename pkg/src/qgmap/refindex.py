"""Persisted reference index: packed chromosomes plus the filtered position set P.

Binary layout (all integers little-endian)::

    header      b"QGRI", u32 version, u32 q, u64 seed, u32 mask_threshold,
                u32 chromosome_count
    chromosome  u32 name_len, name (utf-8), u64 length,
                ceil(length/4) bytes of 2-bit bases (first base in the high bits),
                u64 count, count x (u32 code, u32 position)
    trailer     u64 checksum (blake2b, 8-byte digest, of every preceding byte)
"""
import hashlib
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from qgmap.errors import CorruptIndexError, FormatError, IndexVersionError, InputError
from qgmap.seq import ambiguous_mask, check_q, encode_sequence, qgram_codes
from qgmap.seqio import read_fasta

MAGIC = b"QGRI"
FORMAT_VERSION = 1
DEFAULT_MASK_THRESHOLD = 1000

_HEADER = struct.Struct("<4sIIQII")


def pack_2bit(codes: np.ndarray) -> np.ndarray:
    padded = np.zeros(-(-codes.shape[0] // 4) * 4, dtype=np.uint8)
    padded[:codes.shape[0]] = codes
    quads = padded.reshape(-1, 4)
    return (quads[:, 0] << 6) | (quads[:, 1] << 4) | (quads[:, 2] << 2) | quads[:, 3]


def unpack_2bit(packed: np.ndarray, length: int) -> np.ndarray:
    out = np.empty((packed.shape[0], 4), dtype=np.uint8)
    for t, shift in enumerate((6, 4, 2, 0)):
        out[:, t] = (packed >> shift) & 3
    return out.reshape(-1)[:length]


@dataclass
class Chromosome:
    name: str
    length: int
    packed: np.ndarray
    codes: np.ndarray
    positions: np.ndarray
    _seq: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def sequence(self) -> np.ndarray:
        if self._seq is None:
            self._seq = unpack_2bit(self.packed, self.length)
            self._seq.flags.writeable = False
        return self._seq

    def __eq__(self, other):
        if not isinstance(other, Chromosome):
            return NotImplemented
        return (self.name == other.name and self.length == other.length
                and np.array_equal(self.packed, other.packed)
                and np.array_equal(self.codes, other.codes)
                and np.array_equal(self.positions, other.positions))


@dataclass
class ReferenceIndex:
    chromosomes: List[Chromosome]
    q: int
    mask_threshold: int
    seed: int
    format_version: int = FORMAT_VERSION

    @property
    def total_positions(self) -> int:
        return sum(int(c.positions.shape[0]) for c in self.chromosomes)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(serialize(self))


def long_ambiguous_runs(seq: str, q: int) -> np.ndarray:
    """Boolean mask of bases inside runs of >= q ambiguous symbols."""
    amb = ambiguous_mask(seq)
    if not amb.any():
        return amb
    edges = np.diff(np.concatenate(([0], amb.astype(np.int8), [0])))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    out = np.zeros_like(amb)
    for s, e in zip(starts, ends):
        if e - s >= q:
            out[s:e] = True
    return out


def index_chromosome(name: str, seq: str, q: int, mask_threshold: int,
                     rng: np.random.Generator) -> Chromosome:
    codes = encode_sequence(seq, rng)
    length = codes.shape[0]
    qcodes = qgram_codes(codes, q)
    pos = np.arange(qcodes.shape[0], dtype=np.uint32)
    blocked = long_ambiguous_runs(seq, q)
    if blocked.any():
        cs = np.concatenate(([0], np.cumsum(blocked)))
        ok = cs[q:q + qcodes.shape[0]] == cs[:qcodes.shape[0]]
        qcodes, pos = qcodes[ok], pos[ok]
    order = np.argsort(qcodes, kind="stable")
    qcodes, pos = qcodes[order], pos[order]
    if qcodes.size:
        new_run = np.concatenate(([True], qcodes[1:] != qcodes[:-1]))
        run_id = np.cumsum(new_run) - 1
        freq = np.bincount(run_id)
        keep = freq[run_id] <= mask_threshold
        qcodes, pos = qcodes[keep], pos[keep]
    return Chromosome(name=name, length=length, packed=pack_2bit(codes),
                      codes=np.ascontiguousarray(qcodes, dtype=np.uint32),
                      positions=np.ascontiguousarray(pos, dtype=np.uint32))


def build_reference_index(fasta_path, q: int = 16, mask_threshold: int = DEFAULT_MASK_THRESHOLD,
                          seed: int = 0) -> ReferenceIndex:
    """Read a FASTA file and index every chromosome.

    Ambiguous bases are replaced from one generator seeded with ``seed`` and
    consumed in file order.  Windows touching a run of at least ``q``
    ambiguous bases are left out of P, as are codes seen more than
    ``mask_threshold`` times on their chromosome.
    """
    check_q(q)
    rng = np.random.default_rng(seed)
    chroms = []
    for name, seq in read_fasta(fasta_path):
        if len(seq) >= 2 ** 32:
            raise InputError(f"chromosome {name} exceeds 32-bit coordinates")
        chroms.append(index_chromosome(name, seq, q, mask_threshold, rng))
    if not chroms or all(c.length == 0 for c in chroms):
        raise InputError(f"reference {fasta_path} contains no sequence")
    return ReferenceIndex(chromosomes=chroms, q=q, mask_threshold=mask_threshold, seed=seed)


def serialize(index: ReferenceIndex) -> bytes:
    parts = [_HEADER.pack(MAGIC, index.format_version, index.q, index.seed,
                          index.mask_threshold, len(index.chromosomes))]
    for c in index.chromosomes:
        name = c.name.encode("utf-8")
        parts.append(struct.pack("<I", len(name)) + name + struct.pack("<Q", c.length))
        parts.append(c.packed.astype(np.uint8).tobytes())
        pairs = np.empty((c.codes.shape[0], 2), dtype="<u4")
        pairs[:, 0], pairs[:, 1] = c.codes, c.positions
        parts.append(struct.pack("<Q", pairs.shape[0]) + pairs.tobytes())
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=8).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CorruptIndexError("reference index is truncated")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def deserialize(buf: bytes) -> ReferenceIndex:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("not a qgmap reference index (bad magic bytes)")
    if len(buf) < _HEADER.size + 8:
        raise CorruptIndexError("reference index is truncated")
    _, version, q, seed, threshold, n_chrom = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"index format version {version} is not supported "
                                f"(expected {FORMAT_VERSION}); rebuild it with 'qgmap index'")
    body, digest = buf[:-8], buf[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CorruptIndexError("reference index checksum mismatch (file corrupt or truncated)")
    rd = _Reader(body)
    rd.off = _HEADER.size
    chroms = []
    for _ in range(n_chrom):
        (name_len,) = rd.unpack("<I")
        name = rd.take(name_len).decode("utf-8")
        (length,) = rd.unpack("<Q")
        packed = np.frombuffer(rd.take(-(-length // 4)), dtype=np.uint8).copy()
        (count,) = rd.unpack("<Q")
        pairs = np.frombuffer(rd.take(8 * count), dtype="<u4").reshape(-1, 2)
        chroms.append(Chromosome(name=name, length=length, packed=packed,
                                 codes=pairs[:, 0].astype(np.uint32),
                                 positions=pairs[:, 1].astype(np.uint32)))
    if rd.off != len(body):
        raise CorruptIndexError("trailing bytes after the last chromosome")
    return ReferenceIndex(chromosomes=chroms, q=q, mask_threshold=threshold, seed=seed,
                          format_version=version)


def load_reference_index(path) -> ReferenceIndex:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
