"""Read LASA handwriting shapes from their MATLAB containers.

A shape file holds one variable `demos`: either a cell array of 1x1 structs
(how the dataset ships) or a plain struct array. Each struct carries pos
(d x K), dt, and usually t/vel/acc. Arrays come back transposed to the
row-per-sample convention used everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import loadmat


class ContainerError(ValueError):
    """A .mat file that cannot be read as a LASA shape."""

    def __init__(self, path, reason: str):
        self.path = Path(path)
        super().__init__(f"{self.path}: {reason}")


@dataclass
class LasaDemo:
    positions: np.ndarray  # (K, d)
    velocities: np.ndarray | None  # (K, d) when the container stores them
    dt: float

    def __len__(self):
        return len(self.positions)


@dataclass
class LasaShape:
    name: str
    demos: list[LasaDemo]

    @property
    def dt(self) -> float:
        return self.demos[0].dt

    @property
    def state_dim(self) -> int:
        return self.demos[0].positions.shape[1]


def _records(demos_var):
    """Flatten either container layout into struct records."""
    records = []
    for entry in np.ravel(demos_var):
        if isinstance(entry, np.ndarray) and entry.dtype.names:
            entry = entry.reshape(-1)[0]  # cell element wrapping a 1x1 struct
        records.append(entry)
    return records


def _matrix(record, field, path):
    value = np.asarray(record[field], dtype=float)
    if value.ndim != 2:
        raise ContainerError(path, f"field {field!r} is not a matrix")
    return value.T  # MATLAB stores one column per sample


def read_shape(path) -> LasaShape:
    """Parse one .mat shape file; raises ContainerError on anything off."""
    path = Path(path)
    try:
        container = loadmat(str(path))
    except FileNotFoundError:
        raise
    except Exception as err:  # scipy raises a zoo of types on bad files
        raise ContainerError(path, f"unreadable MATLAB container ({err})") from err

    if "demos" not in container:
        raise ContainerError(path, "no `demos` variable")
    records = _records(container["demos"])
    if not records:
        raise ContainerError(path, "`demos` is empty")

    demos = []
    for i, record in enumerate(records):
        names = record.dtype.names or ()
        if "pos" not in names:
            raise ContainerError(path, f"demonstration {i} has no `pos` field")
        positions = _matrix(record, "pos", path)
        if len(positions) < 2:
            raise ContainerError(path, f"demonstration {i} has fewer than two samples")
        if not np.isfinite(positions).all():
            raise ContainerError(path, f"demonstration {i} has non-finite positions")

        velocities = None
        if "vel" in names and np.asarray(record["vel"]).size:
            velocities = _matrix(record, "vel", path)
            if velocities.shape != positions.shape:
                raise ContainerError(
                    path, f"demonstration {i} velocity shape {velocities.shape} "
                    f"does not match positions {positions.shape}"
                )

        if "dt" not in names:
            raise ContainerError(path, f"demonstration {i} has no `dt` field")
        dt = float(np.ravel(np.asarray(record["dt"], dtype=float))[0])
        if not (np.isfinite(dt) and dt > 0):
            raise ContainerError(path, f"demonstration {i} has dt {dt}")
        demos.append(LasaDemo(positions, velocities, dt))

    dims = {demo.positions.shape[1] for demo in demos}
    if len(dims) > 1:
        raise ContainerError(path, f"demonstrations disagree on dimension: {sorted(dims)}")
    dts = np.array([demo.dt for demo in demos])
    if np.abs(dts - dts[0]).max() > 1e-9 * dts[0]:
        raise ContainerError(path, f"demonstrations disagree on dt: {sorted(set(dts))}")

    return LasaShape(name=path.stem, demos=demos)
