"""figviz command line.

figviz render --csv FILE --kind {recon_overlay,embedding_scatter} --out FILE [--title T]
figviz grid --dir SWEEP_DIR --out FILE
"""

from __future__ import annotations

import argparse
import sys

from .render import ColumnError, FigureSpec, render, render_grid


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="figviz", description="Figures from run artifacts.")
    sub = p.add_subparsers(required=True)

    r = sub.add_parser("render", help="render one figure from a CSV")
    r.add_argument("--csv", required=True)
    r.add_argument("--kind", required=True, choices=["recon_overlay", "embedding_scatter"])
    r.add_argument("--out", required=True)
    r.add_argument("--title", default="")
    r.set_defaults(cmd="render")

    g = sub.add_parser("grid", help="compose a sweep directory into one panel")
    g.add_argument("--dir", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(cmd="grid")

    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.cmd == "render":
            png, svg = render(FigureSpec(args.csv, args.kind, args.out, args.title))
            print(f"wrote {png} and {svg}")
        else:
            rows, cols, (png, svg) = render_grid(args.dir, args.out)
            print(f"wrote {rows}x{cols} grid to {png} and {svg}")
        return 0
    except ColumnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
