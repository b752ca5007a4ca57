"""DNA alphabet encoding, q-gram codes and the fixed-stride read text.

Bases are 2-bit codes (A=0, C=1, G=2, T=3).  A q-gram is read as a base-4
number with its first base in the most significant position, so numeric
q-gram order equals lexicographic order.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from qgmap.errors import InputError

ALPHABET = "ACGT"
MAX_Q = 16

# Ambiguity codes are replaced by a random base, exactly like N.
_AMBIGUOUS = "NRYKMSWBDHV"

_LUT = np.full(256, 255, dtype=np.uint8)
for _code, _base in enumerate(ALPHABET):
    _LUT[ord(_base)] = _code
    _LUT[ord(_base.lower())] = _code
for _base in _AMBIGUOUS:
    _LUT[ord(_base)] = 4
    _LUT[ord(_base.lower())] = 4

_COMPLEMENT = str.maketrans("ACGTNacgtnRYKMSWBDHVrykmswbdhv",
                            "TGCANtgcanYRMKSWVHDByrmkswvhdb")

SeqLike = Union[str, bytes, np.ndarray]


def _default_rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


def encode_base(symbol: str, rng: Optional[np.random.Generator] = None) -> int:
    """Return the 2-bit code of one base; N draws a uniform code from ``rng``."""
    if len(symbol) != 1:
        raise InputError(f"expected a single symbol, got {symbol!r}")
    code = int(_LUT[ord(symbol)]) if ord(symbol) < 256 else 255
    if code == 255:
        raise InputError(f"invalid nucleotide symbol {symbol!r}")
    if code == 4:
        return int(_default_rng(rng).integers(4))
    return code


def encode_sequence(seq: SeqLike, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Encode a whole sequence to a uint8 code array.

    Ambiguous positions are filled from ``rng`` in left-to-right order, so the
    result is reproducible for a fixed generator state.
    """
    if isinstance(seq, np.ndarray):
        if seq.size and int(seq.max()) > 3:
            raise InputError("encoded sequence contains codes outside 0..3")
        return seq.astype(np.uint8, copy=False)
    raw = np.frombuffer(seq.encode("ascii", "replace") if isinstance(seq, str) else bytes(seq),
                        dtype=np.uint8)
    codes = _LUT[raw]
    if codes.size and codes.max() == 255:
        bad = chr(raw[np.argmax(codes == 255)])
        raise InputError(f"invalid nucleotide symbol {bad!r}")
    ambiguous = codes == 4
    n_amb = int(np.count_nonzero(ambiguous))
    if n_amb:
        codes = codes.copy()
        codes[ambiguous] = _default_rng(rng).integers(0, 4, size=n_amb, dtype=np.uint8)
    return codes


def ambiguous_mask(seq: Union[str, bytes]) -> np.ndarray:
    """Boolean mask of positions holding N or another ambiguity code."""
    raw = np.frombuffer(seq.encode("ascii") if isinstance(seq, str) else bytes(seq), dtype=np.uint8)
    return _LUT[raw] == 4


def decode(codes: np.ndarray) -> str:
    return np.frombuffer(b"ACGT", dtype=np.uint8)[np.asarray(codes)].tobytes().decode()


def reverse_complement(seq: str) -> str:
    return seq.translate(_COMPLEMENT)[::-1]


def reverse_complement_codes(codes: np.ndarray) -> np.ndarray:
    return (3 - np.asarray(codes, dtype=np.uint8))[::-1]


def check_q(q: int) -> None:
    if not 1 <= q <= MAX_Q:
        raise InputError(f"q must be in 1..{MAX_Q}, got {q}")


def encode_qgram(window: Sequence[int], q: int) -> int:
    """Numeric code of a q-gram: sum of code(window[t]) * 4**(q-1-t)."""
    if len(window) != q:
        raise InputError(f"window length {len(window)} != q={q}")
    g = 0
    for c in window:
        g = (g << 2) | int(c)
    return g


def qgram_codes(codes: np.ndarray, q: int) -> np.ndarray:
    """Codes of every q-gram start 0..len-q of ``codes`` (uint32 for q <= 16)."""
    check_q(q)
    codes = np.asarray(codes, dtype=np.uint32)
    n = codes.shape[0] - q + 1
    if n <= 0:
        return np.zeros(0, dtype=np.uint32)
    out = np.zeros(n, dtype=np.uint32)
    for t in range(q):
        out <<= np.uint32(2)
        out |= codes[t:t + n]
    return out


@dataclass(frozen=True)
class PackedReadText:
    """Reads laid out back to back at a fixed stride ``m``.

    Read ``r`` occupies ``codes[r*m : r*m + read_lengths[r]]``; the tail of each
    slot is padding and never contributes q-grams.
    """

    codes: np.ndarray
    m: int
    read_lengths: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def read_count(self) -> int:
        return int(self.read_lengths.shape[0])

    def __len__(self):
        return int(self.codes.shape[0])

    def read(self, r: int) -> np.ndarray:
        start = r * self.m
        return self.codes[start:start + int(self.read_lengths[r])]

    def valid_qgram_positions(self, q: int) -> np.ndarray:
        """Text positions whose q-gram lies entirely inside one read."""
        check_q(q)
        if q not in self._cache:
            if self.m < q or self.read_count == 0:
                pos = np.zeros(0, dtype=np.int64)
            else:
                offsets = np.arange(self.m - q + 1, dtype=np.int64)
                starts = np.arange(self.read_count, dtype=np.int64) * self.m
                ok = offsets[None, :] + q <= self.read_lengths[:, None]
                pos = (starts[:, None] + offsets[None, :])[ok]
            self._cache[q] = pos
        return self._cache[q]

    def qgrams(self, q: int):
        """(positions, codes) of all valid q-grams, in text order."""
        pos = self.valid_qgram_positions(q)
        if pos.size == 0:
            return pos, np.zeros(0, dtype=np.uint32)
        all_codes = qgram_codes(self.codes, q)
        return pos, all_codes[pos]


def pack_reads(reads: Sequence[SeqLike], m: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> PackedReadText:
    """Concatenate reads at stride ``m`` (default: the longest read)."""
    encoded = [encode_sequence(r, rng) for r in reads]
    lengths = np.array([e.shape[0] for e in encoded], dtype=np.int64)
    if m is None:
        m = int(lengths.max()) if lengths.size else 0
    if lengths.size and int(lengths.max()) > m:
        raise InputError(f"read of length {int(lengths.max())} exceeds stride m={m}")
    codes = np.zeros(len(encoded) * m, dtype=np.uint8)
    for r, e in enumerate(encoded):
        codes[r * m:r * m + e.shape[0]] = e
    codes.flags.writeable = False
    lengths.flags.writeable = False
    return PackedReadText(codes=codes, m=m, read_lengths=lengths)
