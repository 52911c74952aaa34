"""Command-line entry point: ``moesim-plot --kind <k> --in <file...> --out fig.png``."""

from __future__ import annotations

import argparse
import sys

from moeplots.figures import FIGURE_KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moesim-plot",
        description="Render simulator CSV reports and traces as figures")
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="inputs", required=True, nargs="+",
                        metavar="FILE",
                        help="input CSV reports (or a trace file for "
                             "--kind histogram)")
    parser.add_argument("--baseline", default="ideal",
                        help="strategy used for normalization (default: ideal)")
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(inputs=tuple(args.inputs), kind=args.kind,
                      out=args.out, baseline=args.baseline)
    try:
        sidecar = render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} and {sidecar}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
