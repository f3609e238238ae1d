"""Batch converter CLI: ssvep-convert --kind benchmark|beta --in <mat> --out <archive>."""
from __future__ import annotations

import argparse
import sys

from .convert import convert, verify, verify_full


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ssvep-convert")
    parser.add_argument("--kind", choices=("benchmark", "beta"), required=True)
    parser.add_argument("--in", dest="in_path", required=True, metavar="MAT")
    parser.add_argument("--out", dest="out_path", required=True, metavar="ARCHIVE")
    parser.add_argument("--verify", action="store_true",
                        help="spot-check 100 random coordinates after converting")
    parser.add_argument("--verify-full", action="store_true",
                        help="compare the complete tensor after converting")
    args = parser.parse_args(argv)
    try:
        meta = convert(args.in_path, args.kind, args.out_path)
        print(f"wrote {args.out_path}: [{meta['n_blocks']}][{meta['n_targets']}]"
              f"[{meta['n_channels']}][{meta['n_samples']}]")
        if args.verify or args.verify_full:
            check = verify_full if args.verify_full else verify
            report = check(args.out_path, args.in_path, args.kind)
            print(report.summary())
            if not report.ok:
                return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
