"""Demonstration ingestion: file formats, velocity estimation, normalization.

Demonstrations are uniformly sampled trajectories in workspace units. All
learning happens in normalized coordinates where the shared target sits at
the origin exactly and every dimension is scaled into [-1, 1] by its largest
excursion from the target.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A demonstration file does not parse; carries file and line context."""

    def __init__(self, path, message, line=None):
        where = str(path) if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = Path(path)
        self.line = line


@dataclass
class Demonstration:
    """One uniformly sampled trajectory with per-sample velocities."""

    states: np.ndarray  # (K, d)
    velocities: np.ndarray  # (K, d)
    dt: float
    index: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.states.ndim != 2 or len(self.states) < 2:
            raise ValueError("demonstration needs at least two states of shape (K, d)")
        if self.velocities.shape != self.states.shape:
            raise ValueError("velocities must match states in shape")
        if not (np.isfinite(self.states).all() and np.isfinite(self.velocities).all()):
            raise ValueError("demonstration contains non-finite samples")
        self.dt = float(self.dt)
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def duration(self) -> float:
        return (len(self.states) - 1) * self.dt

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


def estimate_velocities(states, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends."""
    states = np.asarray(states, dtype=float)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if states.ndim != 2 or len(states) < 2:
        raise ValueError("need at least two states")
    v = np.empty_like(states)
    v[0] = (states[1] - states[0]) / dt
    v[-1] = (states[-1] - states[-2]) / dt
    if len(states) > 2:
        v[1:-1] = (states[2:] - states[:-2]) / (2.0 * dt)
    return v


# ---------------------------------------------------------------------------
# normalization


@dataclass
class Normalization:
    """Shift-and-scale between workspace and training coordinates."""

    scale: np.ndarray  # (d,) per-dimension half-range, > 0
    offset: np.ndarray  # (d,) subtracted before scaling (the target)
    target: np.ndarray  # (d,) attractor in workspace coordinates

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if np.any(self.scale <= 0) or not np.isfinite(self.scale).all():
            raise ValueError("scale entries must be positive and finite")

    def normalize_states(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def denormalize_states(self, x):
        return np.asarray(x, dtype=float) * self.scale + self.offset

    def normalize_velocities(self, v):
        return np.asarray(v, dtype=float) / self.scale

    def denormalize_velocities(self, v):
        return np.asarray(v, dtype=float) * self.scale


@dataclass
class NormalizedDataset:
    """Demonstrations in training coordinates plus the mapping back."""

    demos: list[Demonstration]
    normalization: Normalization

    @property
    def target(self) -> np.ndarray:
        return self.normalization.target

    @property
    def scale(self) -> np.ndarray:
        return self.normalization.scale

    @property
    def offset(self) -> np.ndarray:
        return self.normalization.offset

    @property
    def state_dim(self) -> int:
        return self.demos[0].state_dim

    def stacked(self):
        """All samples concatenated: states (N, d), velocities (N, d)."""
        states = np.concatenate([d.states for d in self.demos])
        velocities = np.concatenate([d.velocities for d in self.demos])
        return states, velocities


def normalize(demos, target=None) -> NormalizedDataset:
    """Shift the target to the origin and scale each dimension into [-1, 1].

    The target defaults to the mean final state of the demonstrations. The
    per-dimension scale is the largest shifted excursion, so the scaling is
    symmetric about the target and the target itself maps to zero exactly.
    """
    demos = list(demos)
    if not demos:
        raise ValueError("no demonstrations to normalize")
    d = demos[0].state_dim
    for demo in demos:
        if demo.state_dim != d:
            raise ValueError("demonstrations disagree on state dimension")
    if target is None:
        target = np.mean([demo.states[-1] for demo in demos], axis=0)
    target = np.asarray(target, dtype=float)
    if target.shape != (d,):
        raise ValueError(f"target must have shape ({d},)")

    scale = np.zeros(d)
    for demo in demos:
        scale = np.maximum(scale, np.abs(demo.states - target).max(axis=0))
    flat = scale == 0.0
    if flat.any():
        warnings.warn(
            f"dimensions {np.flatnonzero(flat).tolist()} have zero extent; "
            "using unit scale",
            stacklevel=2,
        )
        scale[flat] = 1.0

    norm = Normalization(scale=scale, offset=target.copy(), target=target.copy())
    scaled = [
        Demonstration(
            states=norm.normalize_states(demo.states),
            velocities=norm.normalize_velocities(demo.velocities),
            dt=demo.dt,
            index=demo.index,
        )
        for demo in demos
    ]
    return NormalizedDataset(scaled, norm)


# ---------------------------------------------------------------------------
# file formats


def _numbered_columns(names, prefix):
    """Indices of prefix1..prefixD in names, or None if absent."""
    pattern = re.compile(rf"^{prefix}(\d+)$")
    found = {}
    for i, name in enumerate(names):
        match = pattern.match(name)
        if match:
            found[int(match.group(1))] = i
    if not found:
        return None
    d = max(found)
    if sorted(found) != list(range(1, d + 1)):
        return None
    return [found[k] for k in range(1, d + 1)]


def _load_csv(path: Path) -> list[Demonstration]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise FormatError(path, "empty file")
    header = [cell.strip() for cell in rows[0]]
    x_cols = _numbered_columns(header, "x")
    if x_cols is None:
        raise FormatError(path, f"header must name columns t,x1..xd, got {header}", line=1)
    if "t" not in header:
        raise FormatError(path, "missing time column t", line=1)
    t_col = header.index("t")
    v_cols = _numbered_columns(header, "v")
    if v_cols is not None and len(v_cols) != len(x_cols):
        raise FormatError(path, "velocity columns do not match state columns", line=1)
    demo_col = header.index("demo") if "demo" in header else None

    groups: dict[int, list] = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(path, f"expected {len(header)} fields, got {len(row)}", line=line_no)
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            raise FormatError(path, f"non-numeric field in {row}", line=line_no) from None
        key = int(values[demo_col]) if demo_col is not None else 0
        groups.setdefault(key, []).append(values)

    demos = []
    for key in sorted(groups):
        block = np.asarray(groups[key])
        if len(block) < 2:
            raise FormatError(path, f"demonstration {key} has fewer than two samples")
        t = block[:, t_col]
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise FormatError(path, f"demonstration {key} has non-increasing time stamps")
        # first step is exact for files whose time column starts at 0
        dt = float(steps[0])
        if np.max(np.abs(steps - dt)) > 1e-4 * dt:
            raise FormatError(path, f"demonstration {key} is not uniformly sampled")
        states = block[:, x_cols]
        if v_cols is not None:
            velocities = block[:, v_cols]
        else:
            velocities = estimate_velocities(states, dt)
        demos.append(Demonstration(states, velocities, dt, index=key))
    return demos


def _load_json(path: Path) -> list[Demonstration]:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(path, f"invalid JSON: {err}", line=err.lineno) from None
    if not isinstance(payload, list) or not payload:
        raise FormatError(path, "expected a non-empty array of demonstrations")
    demos = []
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict):
            raise FormatError(path, f"entry {i} is not an object")
        if "dt" not in entry:
            raise FormatError(path, f"entry {i} is missing dt")
        if "states" not in entry:
            raise FormatError(path, f"entry {i} is missing states")
        try:
            states = np.asarray(entry["states"], dtype=float)
            dt = float(entry["dt"])
            if "velocities" in entry and entry["velocities"] is not None:
                velocities = np.asarray(entry["velocities"], dtype=float)
            else:
                velocities = estimate_velocities(states, dt)
            demos.append(Demonstration(states, velocities, dt, index=i))
        except ValueError as err:
            raise FormatError(path, f"entry {i}: {err}") from None
    return demos


def load_demonstrations(path, fmt: str | None = None) -> list[Demonstration]:
    """Load demonstrations from a CSV/JSON file or a directory of them.

    Directories are read in sorted name order and demos are reindexed
    consecutively. fmt overrides suffix-based detection ("csv" or "json").
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    if path.is_dir():
        # manifest.json is a metadata sidecar, not demonstration data
        files = sorted(
            p
            for p in path.iterdir()
            if p.suffix.lower() in (".csv", ".json") and p.name != "manifest.json"
        )
        if not files:
            raise FormatError(path, "directory holds no .csv or .json files")
        demos = []
        for p in files:
            demos.extend(load_demonstrations(p, fmt))
        for i, demo in enumerate(demos):
            demo.index = i
        return demos

    kind = fmt or path.suffix.lower().lstrip(".")
    if kind == "csv":
        return _load_csv(path)
    if kind == "json":
        return _load_json(path)
    raise FormatError(path, f"unsupported format {kind!r} (expected csv or json)")


def write_demos_csv(demos, path, with_velocities: bool = True) -> Path:
    """Write demonstrations to one CSV with a demo index column."""
    demos = list(demos)
    path = Path(path)
    d = demos[0].state_dim
    header = ["demo", "t"] + [f"x{j}" for j in range(1, d + 1)]
    if with_velocities:
        header += [f"v{j}" for j in range(1, d + 1)]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for demo in demos:
            for k in range(len(demo.states)):
                row = [demo.index, repr(k * demo.dt)]
                row += [repr(float(v)) for v in demo.states[k]]
                if with_velocities:
                    row += [repr(float(v)) for v in demo.velocities[k]]
                writer.writerow(row)
    return path
