"""kt-convert: one-shot checkpoint conversion, JSON summary on stdout."""

from __future__ import annotations

import argparse
import json
import sys

from weightconv.convert import ConversionError, convert


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kt-convert",
        description="Convert a pretrained BERT-family checkpoint directory "
                    "into an NTA1 weight archive plus vocabulary file.")
    parser.add_argument("--src", required=True, help="checkpoint directory")
    parser.add_argument("--out", required=True, help="output archive (.nta)")
    parser.add_argument("--vocab", required=True, help="output vocabulary (.txt)")
    parser.add_argument("--seed", type=int, default=0,
                        help="classifier-head init seed (default 0)")
    args = parser.parse_args(argv)
    try:
        summary = convert(args.src, args.out, args.vocab, seed=args.seed)
    except ConversionError as exc:
        print(f"kt-convert: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
