"""render-figures: draw figure analogs from a results directory."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURES, MissingColumnError, render_all


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="render-figures",
                                 description="render figures from mpsim outputs")
    ap.add_argument("--in", dest="in_dir", required=True,
                    help="results directory (runs/, sweep CSVs)")
    ap.add_argument("--out", dest="out_dir", required=True,
                    help="directory for the SVG files")
    ap.add_argument("--figures", nargs="+", choices=sorted(FIGURES),
                    help="subset of figures to render (default: all available)")
    ns = ap.parse_args(argv)
    try:
        written = render_all(ns.in_dir, ns.out_dir, ns.figures)
    except MissingColumnError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not written:
        print("no renderable inputs found", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
