"""figkit command line: ``figkit <kind> --in <paths...> --out <file.png>``."""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_KINDS, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="figkit", description="render floodlab output files into figures")
    parser.add_argument("kind", choices=sorted(FIGURE_KINDS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSV / ESRI ASCII files (order matters per kind)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--station", default=None,
                        help="station name for station-panel")
    parser.add_argument("--labels", nargs="*", default=None,
                        help="legend labels for multi-input kinds")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        render(args.kind, args.inputs, args.out,
               {"station": args.station, "labels": args.labels})
    except (SchemaError, FileNotFoundError) as exc:
        print(f"figkit: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
