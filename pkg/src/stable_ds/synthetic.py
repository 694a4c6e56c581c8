"""Synthetic handwriting-style demonstration sets.

Three planar shapes (angle, sine, jshape) on a millimetre scale, seven
demonstrations each by default. Every demonstration ends exactly on the
shared target with zero velocity, decelerating on approach the way recorded
handwriting demonstrations do. Per-demo variation comes from small rotation,
amplitude, start-offset and low-frequency waviness perturbations, all with
closed-form derivatives so the stored velocities are exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import data

SHAPES = ("angle", "sine", "jshape")

TARGET = np.array([3.5, -1.5])  # workspace millimetres

# composite cubic Bezier control points, local frame ending at the origin;
# segment joints are C1 (equal incoming/outgoing control legs)
_BEZIERS = {
    "angle": (
        ((-38.0, 46.0), (-37.0, 26.0), (-34.0, 10.0), (-28.0, 4.0)),
        ((-28.0, 4.0), (-22.0, -2.0), (-10.0, -4.0), (0.0, 0.0)),
    ),
    "jshape": (
        ((26.0, 54.0), (27.0, 30.0), (28.0, 18.0), (24.0, 6.0)),
        ((24.0, 6.0), (20.0, -6.0), (6.0, -9.0), (0.0, 0.0)),
    ),
}

_SINE_LENGTH = 46.0
_SINE_AMPLITUDE = 16.0
_SINE_PHASE = 2.4 * np.pi


def _bezier(ctrl, s):
    """Cubic Bezier value and derivative at s in [0, 1]; s is (K,)."""
    p = np.asarray(ctrl, dtype=float)
    s = s[:, None]
    c = 1.0 - s
    value = c**3 * p[0] + 3 * c**2 * s * p[1] + 3 * c * s**2 * p[2] + s**3 * p[3]
    deriv = 3 * (
        c**2 * (p[1] - p[0]) + 2 * c * s * (p[2] - p[1]) + s**2 * (p[3] - p[2])
    )
    return value, deriv


def _base_curve(name, u):
    """Shape curve c(u) and dc/du in the local frame, u (K,) in [0, 1]."""
    if name == "sine":
        w = 1.0 - u
        x = -_SINE_LENGTH * w
        y = _SINE_AMPLITUDE * np.sin(_SINE_PHASE * w)
        dx = np.full_like(u, _SINE_LENGTH)
        dy = -_SINE_AMPLITUDE * _SINE_PHASE * np.cos(_SINE_PHASE * w)
        return np.stack([x, y], axis=1), np.stack([dx, dy], axis=1)
    segments = _BEZIERS[name]
    n = len(segments)
    t = np.clip(u * n, 0.0, n - 1e-12)
    index = t.astype(int)
    value = np.empty((len(u), 2))
    deriv = np.empty((len(u), 2))
    for i, ctrl in enumerate(segments):
        mask = index == i
        if mask.any():
            v, dv = _bezier(ctrl, t[mask] - i)
            value[mask] = v
            deriv[mask] = dv * n
    return value, deriv


def make_shape(
    name: str,
    n_demos: int = 7,
    samples: int = 1000,
    dt: float = 0.004,
    seed: int = 0,
) -> list[data.Demonstration]:
    """Generate one shape's demonstration set."""
    if name not in SHAPES:
        raise ValueError(f"unknown shape {name!r}, expected one of {SHAPES}")
    rng = np.random.default_rng((seed, SHAPES.index(name)))
    tau = np.linspace(0.0, 1.0, samples)
    # time profile: brisk start, zero velocity at the target
    u = 1.0 - (1.0 - tau) ** 2
    du = 2.0 * (1.0 - tau)
    duration = (samples - 1) * dt

    demos = []
    for i in range(n_demos):
        angle = rng.uniform(-0.06, 0.06)
        rot = np.array(
            [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
        )
        amp = rng.uniform(0.94, 1.06)
        start_offset = rng.uniform(-3.0, 3.0, size=2)
        wave = rng.normal(0.0, 1.0, size=(2, 2))  # (harmonic, dim)

        base, dbase = _base_curve(name, u)
        pos = amp * base @ rot.T
        dpos = amp * dbase @ rot.T
        for m in (1, 2):
            pos += wave[m - 1] * np.sin(m * np.pi * u)[:, None]
            dpos += wave[m - 1] * (m * np.pi * np.cos(m * np.pi * u))[:, None]
        pos += (1.0 - u)[:, None] ** 2 * start_offset
        dpos += -2.0 * (1.0 - u)[:, None] * start_offset

        states = TARGET + pos
        velocities = dpos * (du / duration)[:, None]
        demos.append(data.Demonstration(states, velocities, dt, index=i))
    return demos


def write_shape_csv(name: str, out_dir, **kwargs) -> Path:
    """Write one shape as a single CSV with a demo column."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return data.write_demos_csv(make_shape(name, **kwargs), out_dir / f"{name}.csv")


def write_all_shapes(out_dir, **kwargs) -> list[Path]:
    return [write_shape_csv(name, out_dir, **kwargs) for name in SHAPES]
