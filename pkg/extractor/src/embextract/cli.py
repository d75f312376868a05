"""CLI: run a checkpoint over a sentence file and write an embedding store."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from embextract.extract import DEFAULT_MAX_SEQ_LEN, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embextract",
        description="Dump all hidden layers of a pretrained model into an embedding store",
    )
    parser.add_argument("--model", required=True, help="checkpoint identifier or local path")
    parser.add_argument("--input", required=True, help="one whitespace-tokenized sentence per line")
    parser.add_argument("--out", required=True, help="output store path")
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--max-len", type=int, default=DEFAULT_MAX_SEQ_LEN,
                        help="skip sentences longer than this many subwords")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        model=args.model,
        input_path=args.input,
        output_path=args.out,
        batch_size=args.batch,
        max_seq_len=args.max_len,
        device=args.device,
    )
    try:
        summary = extract(job)
    except (OSError, ValueError) as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 2
    print(json.dumps(summary.to_dict(), ensure_ascii=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
