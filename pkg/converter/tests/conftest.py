"""Synthetic .mat fixtures in both container layouts the dataset uses."""

import numpy as np
import pytest
from scipy.io import savemat

FIELDS = ("pos", "t", "vel", "acc", "dt")


def shape_arrays(n_demos=7, samples=1000, seed=0, dt=0.004):
    """Source-of-truth arrays for one synthetic shape, MATLAB layout (d x K)."""
    rng = np.random.default_rng(seed)
    demos = []
    for _ in range(n_demos):
        u = np.linspace(0.0, 1.0, samples)
        pos = np.stack(
            [
                -40.0 * (1.0 - u) + rng.normal(0, 1.5),
                12.0 * np.sin(2.0 * np.pi * u + rng.uniform(0, 0.3)),
            ]
        )
        vel = np.gradient(pos, dt, axis=1)
        t = (np.arange(samples) * dt)[None, :]
        demos.append(
            {"pos": pos, "t": t, "vel": vel, "acc": np.zeros_like(pos), "dt": dt}
        )
    return demos


def write_cell_mat(path, demos):
    """demos as a cell array of structs: the layout the dataset ships."""
    cells = np.empty((1, len(demos)), dtype=object)
    for i, demo in enumerate(demos):
        cells[0, i] = demo
    savemat(path, {"demos": cells})
    return path


def write_struct_mat(path, demos):
    """demos as a plain 1xN struct array."""
    rec = np.empty((1, len(demos)), dtype=[(k, object) for k in FIELDS])
    for i, demo in enumerate(demos):
        for key in FIELDS:
            rec[0, i][key] = demo[key]
    savemat(path, {"demos": rec})
    return path


@pytest.fixture
def angle_mat(tmp_path):
    demos = shape_arrays(n_demos=7, samples=120, seed=1)
    return write_cell_mat(tmp_path / "Angle.mat", demos), demos
