"""Command line: ``qgmap index`` and ``qgmap map``.

Exit status is 0 on success, 1 for usage errors and 2 for data or I/O errors.
"""
import argparse
import logging
import os
import shlex
import sys
from typing import List, Optional

from qgmap import __version__
from qgmap.errors import QGMapError
from qgmap.pipeline import DEFAULT_BUFFER_BASES, MapOptions, iter_templates, run_pipeline
from qgmap.postprocess import ALL, BEST_STRATUM, StratumConfig
from qgmap.refindex import DEFAULT_MASK_THRESHOLD, build_reference_index, load_reference_index
from qgmap.seq import MAX_Q
from qgmap.validation import BandConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
THREADS_ENV = "QGMAP_THREADS"

log = logging.getLogger("qgmap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive(value: str) -> int:
    try:
        n = int(float(value)) if "e" in value.lower() else int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return n


def _non_negative(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}")
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {value}")
    return n


def _q_length(value: str) -> int:
    n = _positive(value)
    if n > MAX_Q:
        raise argparse.ArgumentTypeError(f"q must be at most {MAX_Q}: {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qgmap", description="q-group index short-read mapper")
    p.add_argument("--version", action="version", version=f"qgmap {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ix = sub.add_parser("index", help="build a reference index from FASTA")
    ix.add_argument("fasta")
    ix.add_argument("-o", "--output", required=True, help="index file to write")
    ix.add_argument("--q", type=_q_length, default=16)
    ix.add_argument("--mask-threshold", type=_non_negative, default=DEFAULT_MASK_THRESHOLD,
                    help="drop q-grams occurring more often than this per chromosome (0: off)")
    ix.add_argument("--seed", type=_non_negative, default=0,
                    help="seed for replacing ambiguous bases")

    mp = sub.add_parser("map", help="map FASTQ reads to an indexed reference")
    mp.add_argument("index")
    mp.add_argument("reads", nargs="+", help="one FASTQ file, or two for paired-end")
    mp.add_argument("-o", "--output", default="-", help="SAM output (default: stdout)")
    mp.add_argument("--query-buffer-bases", type=_positive, default=DEFAULT_BUFFER_BASES)
    mp.add_argument("--percent-identity", type=float, default=80.0)
    mp.add_argument("--mode", choices=[BEST_STRATUM, ALL], default=BEST_STRATUM)
    mp.add_argument("--insert-min", type=_non_negative, default=0)
    mp.add_argument("--insert-max", type=_non_negative, default=1000)
    mp.add_argument("--band-width", type=_positive, default=32)
    mp.add_argument("--seed", type=_non_negative, default=0)
    mp.add_argument("--threads", type=_positive, default=None,
                    help=f"worker threads (default: ${THREADS_ENV} or 1)")
    mp.add_argument("--serial", action="store_true", help="run the stages one after another")
    return p


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def run_index(args) -> int:
    index = build_reference_index(args.fasta, q=args.q, mask_threshold=args.mask_threshold,
                                  seed=args.seed)
    index.save(args.output)
    log.info("indexed %d chromosomes, %d positions", len(index.chromosomes),
             index.total_positions)
    return EXIT_OK


def run_map(args, argv: List[str]) -> int:
    if len(args.reads) > 2:
        raise UsageError("map takes one FASTQ file, or two for paired-end reads")
    if not 0 <= args.percent_identity <= 100:
        raise UsageError("--percent-identity must be in [0, 100]")
    if args.insert_min > args.insert_max:
        raise UsageError("--insert-min must not exceed --insert-max")
    try:
        band = BandConfig(args.band_width, args.percent_identity / 100.0)
    except QGMapError as exc:
        raise UsageError(str(exc))
    opts = MapOptions(band=band, mode=StratumConfig(args.mode),
                      insert_range=(args.insert_min, args.insert_max), seed=args.seed,
                      threads=_threads(args.threads), buffer_bases=args.query_buffer_bases,
                      pipelined=not args.serial)
    ref = load_reference_index(args.index)
    templates = iter_templates(*args.reads)
    command_line = " ".join(shlex.quote(a) for a in ["qgmap"] + argv)
    if args.output == "-":
        n = run_pipeline(ref, templates, opts, sys.stdout, command_line)
        sys.stdout.flush()
    else:
        with open(args.output, "w") as sink:
            n = run_pipeline(ref, templates, opts, sink, command_line)
    log.info("wrote %d SAM records", n)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="qgmap: %(message)s")
        if args.command == "index":
            return run_index(args)
        return run_map(args, argv)
    except UsageError as exc:
        print(f"qgmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QGMapError, OSError) as exc:
        print(f"qgmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
