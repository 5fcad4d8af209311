"""Command line: `flowplot render <kind> --in <file> [--in <file> ...] --out <image>`.

Input roles are inferred from CSV headers (see package docstring), so the
order of --in flags only matters for trajectory overlays: the first
trajectory is drawn as the optimized path, the second as the baseline.
"""

from __future__ import annotations

import argparse
import sys

from . import FigureKind, FigureRequest, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowplot",
                                     description="Render figures from flowshoot run artifacts.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from CSV artifacts")
    p.add_argument("kind", choices=[k.value for k in FigureKind],
                   help="figure kind")
    p.add_argument("--in", dest="inputs", action="append", required=True,
                   metavar="FILE", help="input CSV (repeatable)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--bounds", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"),
                   help="axis bounds for trajectory figures")
    p.add_argument("--quiver-step", type=int, default=1,
                   help="keep every k-th quiver arrow (default 1)")

    args = parser.parse_args(argv)
    request = FigureRequest(
        kind=FigureKind(args.kind),
        inputs=args.inputs,
        output=args.out,
        bounds=tuple(args.bounds) if args.bounds else None,
        quiver_step=args.quiver_step,
    )
    try:
        path = render(request)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
