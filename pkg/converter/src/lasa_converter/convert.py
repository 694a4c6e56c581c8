"""Emit converted shapes: one CSV per demonstration plus a manifest.

The CSVs follow the interchange contract of the training tools — columns
t,x1..xd and optionally v1..vd, floats written with repr so values survive
the round trip bit-for-bit. Velocities are copied only when the container
stores them; nothing is estimated here. Output is deterministic, so
re-running a conversion rewrites identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .reader import LasaShape, read_shape


def _write_demo_csv(demo, path: Path):
    d = demo.positions.shape[1]
    header = ["t"] + [f"x{j}" for j in range(1, d + 1)]
    if demo.velocities is not None:
        header += [f"v{j}" for j in range(1, d + 1)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(demo)):
            row = [repr(k * demo.dt)]
            row += [repr(float(v)) for v in demo.positions[k]]
            if demo.velocities is not None:
                row += [repr(float(v)) for v in demo.velocities[k]]
            writer.writerow(row)


def convert_shape(shape: LasaShape, out_dir) -> Path:
    """Write one shape into out_dir/<name>/; returns that directory."""
    shape_dir = Path(out_dir) / shape.name
    shape_dir.mkdir(parents=True, exist_ok=True)
    for i, demo in enumerate(shape.demos):
        _write_demo_csv(demo, shape_dir / f"demo_{i:02d}.csv")
    manifest = {
        "shape": shape.name,
        "demo_count": len(shape.demos),
        "dt": shape.dt,
    }
    with open(shape_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return shape_dir


def convert_path(src, out_dir) -> list[Path]:
    """Convert a .mat file, or every .mat in a directory (sorted by name)."""
    src = Path(src)
    if not src.exists():
        raise FileNotFoundError(f"no such file or directory: {src}")
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() == ".mat")
        if not files:
            raise FileNotFoundError(f"{src}: directory holds no .mat files")
    else:
        files = [src]
    return [convert_shape(read_shape(p), out_dir) for p in files]
