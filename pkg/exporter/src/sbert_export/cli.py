"""Command line for the embedding exporter: ``sbert-export export ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .exporter import DEFAULT_MODEL, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbert-export",
        description="Export sentence-embedding files for JSONL corpora.",
    )
    parser.add_argument("--version", action="version", version=f"sbert-export {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("export", help="encode a corpus into a binary embedding file")
    p.add_argument("--corpus", required=True, help="JSONL corpus path")
    p.add_argument("--out", required=True, help="embedding file to write")
    p.add_argument("--model", default=DEFAULT_MODEL, help="sentence-transformer model id")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--device", default=None, help="torch device (default: auto)")
    p.add_argument(
        "--normalize",
        action="store_true",
        help="export unit-norm vectors instead of raw pooled ones",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExportJob(
        corpus_path=args.corpus,
        output_path=args.out,
        model=args.model,
        batch_size=args.batch_size,
        device=args.device,
        normalize=args.normalize,
    )
    try:
        matrix = export(job)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} embeddings to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
