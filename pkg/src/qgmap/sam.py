"""SAM v1 text output."""
from dataclasses import dataclass, field
from typing import IO, Iterable, List, Sequence, Tuple

from qgmap import __version__
from qgmap.postprocess import MappingRecord
from qgmap.seq import reverse_complement

FLAG_PAIRED = 0x1
FLAG_PROPER = 0x2
FLAG_UNMAPPED = 0x4
FLAG_MATE_UNMAPPED = 0x8
FLAG_REVERSE = 0x10
FLAG_MATE_REVERSE = 0x20
FLAG_FIRST = 0x40
FLAG_SECOND = 0x80
FLAG_SECONDARY = 0x100


@dataclass
class SamHeader:
    references: Sequence[Tuple[str, int]]
    command_line: str = ""
    comments: List[str] = field(default_factory=list)

    def lines(self) -> List[str]:
        out = ["@HD\tVN:1.6\tSO:unsorted"]
        out += [f"@SQ\tSN:{name}\tLN:{length}" for name, length in self.references]
        pg = f"@PG\tID:qgmap\tPN:qgmap\tVN:{__version__}"
        if self.command_line:
            pg += f"\tCL:{self.command_line}"
        out.append(pg)
        out += [f"@CO\t{c}" for c in self.comments]
        return out


def record_flag(rec: MappingRecord) -> int:
    flag = 0
    if rec.paired:
        flag |= FLAG_PAIRED | (FLAG_SECOND if rec.mate else FLAG_FIRST)
        if rec.proper_pair:
            flag |= FLAG_PROPER
        if rec.mate_unmapped:
            flag |= FLAG_MATE_UNMAPPED
        elif rec.mate_strand:
            flag |= FLAG_MATE_REVERSE
    if not rec.mapped:
        flag |= FLAG_UNMAPPED
    elif rec.strand:
        flag |= FLAG_REVERSE
    if rec.secondary:
        flag |= FLAG_SECONDARY
    return flag


def format_record(rec: MappingRecord, ref_names: Sequence[str]) -> str:
    seq, qual = rec.seq, rec.qual
    if rec.mapped and rec.strand:
        seq = reverse_complement(seq)
        qual = qual[::-1]
    if rec.mapped:
        rname, pos = ref_names[rec.chrom], rec.pos + 1
    elif rec.paired and rec.mate_chrom is not None and not rec.mate_unmapped:
        # unmapped read placed at its mapped mate
        rname, pos = ref_names[rec.mate_chrom], rec.mate_pos + 1
    else:
        rname, pos = "*", 0
    if rec.paired and rec.mate_chrom is not None:
        mate_name = ref_names[rec.mate_chrom]
        rnext = "=" if mate_name == rname else mate_name
        pnext = rec.mate_pos + 1
    else:
        rnext, pnext = "*", 0
    cols = [rec.name, str(record_flag(rec)), rname, str(pos),
            str(rec.mapq if rec.mapped else 0), rec.cigar if rec.mapped else "*",
            rnext, str(pnext), str(rec.tlen), seq or "*", qual or "*"]
    if rec.mapped:
        cols += [f"NM:i:{rec.nm}", f"ZR:i:{rec.hit_rank}", f"ZS:i:{rec.stratum}"]
    return "\t".join(cols)


def emit_sam(records: Iterable[MappingRecord], header: SamHeader, sink: IO[str],
             write_header: bool = True) -> int:
    """Write ``records`` to ``sink``; returns the number of alignment lines."""
    names = [name for name, _ in header.references]
    if write_header:
        sink.write("\n".join(header.lines()) + "\n")
    n = 0
    for rec in records:
        sink.write(format_record(rec, names) + "\n")
        n += 1
    return n
