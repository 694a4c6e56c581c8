"""Command line: lasa-convert <mat-file-or-dir> <out-dir>."""

from __future__ import annotations

import argparse
import sys

from .convert import convert_path
from .reader import ContainerError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lasa-convert",
        description="Convert LASA handwriting .mat shapes to per-demonstration CSVs.",
    )
    parser.add_argument("src", help=".mat shape file or a directory of them")
    parser.add_argument("out", help="output directory (one subdirectory per shape)")
    args = parser.parse_args(argv)

    try:
        shape_dirs = convert_path(args.src, args.out)
    except (FileNotFoundError, ContainerError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    for shape_dir in shape_dirs:
        n = len(list(shape_dir.glob("demo_*.csv")))
        print(f"{shape_dir.name}: {n} demonstrations -> {shape_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
