"""Command-line front end (`figures`).

One figure per invocation. Exit codes: 0 success, 2 schema or usage error.
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, render
from .schema import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="Render one figure from an exported experiment CSV.")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="input_csv", required=True,
                        metavar="CSV", help="input CSV in the documented schema")
    parser.add_argument("--out", dest="output_path", required=True,
                        metavar="IMAGE", help="output image path (.png)")
    parser.add_argument("--title", default=None)
    parser.add_argument("--xlabel", default=None)
    parser.add_argument("--ylabel", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(input_csv=args.input_csv, kind=args.kind,
                      output_path=args.output_path, title=args.title,
                      xlabel=args.xlabel, ylabel=args.ylabel)
    try:
        path = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
