"""Command-line entry point.

    ftarga-plot --learned <csv> --oracle <csv>
                --kind <heatmap-pair|curve-pair> --out <png>
                [--xlabel LABEL] [--ylabel LABEL]
"""

from __future__ import annotations

import argparse
import sys

from .plotting import KINDS, PlotJob, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ftarga-plot", description=__doc__)
    parser.add_argument("--learned", required=True, help="learned-values grid CSV")
    parser.add_argument("--oracle", required=True, help="oracle-values grid CSV")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--xlabel", default=None)
    parser.add_argument("--ylabel", default=None)
    args = parser.parse_args(argv)

    job = PlotJob(learned_csv=args.learned, oracle_csv=args.oracle,
                  kind=args.kind, out_path=args.out,
                  xlabel=args.xlabel, ylabel=args.ylabel)
    try:
        render(job)
    except (ValueError, OSError) as exc:
        print(f"ftarga-plot: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
