"""Command-line figure rendering from simulator output files."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, render
from .gridio import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbm-render", description=__doc__)
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument(
        "--in", dest="inputs", action="append", required=True,
        help="input file (repeat for multi-panel figures); grids by their .json path",
    )
    parser.add_argument("--out", required=True, help="output image path (.svg or .png)")
    parser.add_argument("--levels", type=int, default=8)
    parser.add_argument("--q-range", type=float, nargs=2, default=None)
    parser.add_argument("--p-range", type=float, nargs=2, default=None)
    parser.add_argument("--label", dest="labels", action="append", default=[])
    parser.add_argument("--title", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        inputs=tuple(args.inputs),
        kind=args.kind,
        output=args.out,
        levels=args.levels,
        q_range=tuple(args.q_range) if args.q_range else None,
        p_range=tuple(args.p_range) if args.p_range else None,
        labels=tuple(args.labels),
        title=args.title,
    )
    try:
        print(render(spec))
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
