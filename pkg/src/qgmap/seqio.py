"""Minimal FASTA / FASTQ readers (plain or gzip)."""
import gzip
import re
from dataclasses import dataclass
from typing import IO, Iterator, Tuple

from qgmap.errors import FormatError

_SEQ_LINE = re.compile(r"^[A-Za-z]*$")


def open_text(path) -> IO[str]:
    """Open ``path`` for reading text, transparently gunzipping."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt")
    return open(path, "rt")


def read_fasta(path) -> Iterator[Tuple[str, str]]:
    """Yield ``(name, sequence)``; the name is the header up to the first blank."""
    name, chunks = None, []
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if name is not None:
                    yield name, "".join(chunks)
                name = line[1:].split()[0] if line[1:].strip() else ""
                if not name:
                    raise FormatError("empty FASTA header", lineno)
                chunks = []
            elif name is None:
                raise FormatError("sequence data before the first header", lineno)
            elif not _SEQ_LINE.match(line):
                raise FormatError(f"invalid characters in sequence line {line[:20]!r}", lineno)
            else:
                chunks.append(line)
    if name is not None:
        yield name, "".join(chunks)


@dataclass(frozen=True)
class FastqRecord:
    name: str
    seq: str
    qual: str


def read_fastq(path) -> Iterator[FastqRecord]:
    with open_text(path) as fh:
        lineno = 0
        while True:
            header = fh.readline()
            lineno += 1
            if not header:
                return
            if not header.strip():
                continue
            seq, plus, qual = fh.readline(), fh.readline(), fh.readline()
            if not header.startswith("@"):
                raise FormatError("FASTQ record does not start with '@'", lineno)
            if not plus.startswith("+"):
                raise FormatError("missing '+' separator line", lineno + 2)
            seq, qual = seq.strip(), qual.strip()
            if len(seq) != len(qual):
                raise FormatError("sequence and quality lengths differ", lineno + 3)
            if not _SEQ_LINE.match(seq):
                raise FormatError("invalid characters in read sequence", lineno + 1)
            name = header[1:].split()[0] if header[1:].strip() else ""
            if name.endswith("/1") or name.endswith("/2"):
                name = name[:-2]
            yield FastqRecord(name, seq, qual)
            lineno += 3
