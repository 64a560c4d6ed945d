"""One command per figure; each takes --in-dir and --out."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureSpec, render
from .io import SchemaError


def _run(figure: str, argv=None) -> int:
    parser = argparse.ArgumentParser(prog=f"covsteer-fig-{figure}")
    parser.add_argument("--in-dir", required=True, help="directory with the run exports")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--line-width", type=float, default=1.0)
    parser.add_argument("--stride", type=int, default=1, help="subsample stride")
    args = parser.parse_args(argv)
    try:
        out = render(
            FigureSpec(
                in_dir=args.in_dir,
                figure=figure,
                out_path=args.out,
                line_width=args.line_width,
                stride=args.stride,
            )
        )
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


def main_tube3d(argv=None) -> int:
    return _run("tube3d", argv)


def main_trajectories(argv=None) -> int:
    return _run("trajectories", argv)


def main_ellipses2d(argv=None) -> int:
    return _run("ellipses2d", argv)


def main_sigma(argv=None) -> int:
    return _run("sigma", argv)


if __name__ == "__main__":
    sys.exit(_run(sys.argv[1], sys.argv[2:]))
