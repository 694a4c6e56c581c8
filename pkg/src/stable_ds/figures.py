"""Headless matplotlib rendering: vector-field panels and loss curves.

SVG output is kept deterministic (fixed hash salt, no embedded dates) so
repeated runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "svg.hashsalt": "stable-ds",
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.25,
    }
)


def render_field_svg(samples, target, demos=(), rollouts=(), title=None) -> str:
    """Arrow plot of a planar field with demo/repro overlays; returns SVG text."""
    positions = np.asarray(samples.positions, dtype=float)
    velocities = np.asarray(samples.velocities, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 5.6), constrained_layout=True)

    ok = np.isfinite(velocities).all(axis=1)
    speed = np.linalg.norm(velocities[ok], axis=1)
    unit = np.where(speed[:, None] > 0, velocities[ok] / np.maximum(speed[:, None], 1e-30), 0.0)
    q = ax.quiver(
        positions[ok, 0],
        positions[ok, 1],
        unit[:, 0],
        unit[:, 1],
        speed,
        cmap="viridis",
        angles="xy",
        pivot="mid",
        width=0.0028,
        alpha=0.85,
    )
    fig.colorbar(q, ax=ax, label="speed", shrink=0.85)

    for i, demo in enumerate(demos):
        states = np.asarray(demo.states, dtype=float)
        ax.plot(
            states[:, 0],
            states[:, 1],
            color="0.2",
            lw=1.3,
            label="demonstration" if i == 0 else None,
        )
    for i, repro in enumerate(rollouts):
        states = np.asarray(repro.states, dtype=float)
        ax.plot(
            states[:, 0],
            states[:, 1],
            color="crimson",
            lw=1.2,
            ls="--",
            label="reproduction" if i == 0 else None,
        )
    target = np.asarray(target, dtype=float)
    ax.plot(target[0], target[1], marker="*", ms=13, mfc="gold", mec="k", ls="none", label="target")

    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", framealpha=0.9)

    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def save_loss_curve(history, path) -> Path:
    """Loss-vs-iteration curve for a training run (SVG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iters = [r.iteration for r in history]
    losses = [r.loss for r in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.4), constrained_layout=True)
    ax.plot(iters, losses, lw=0.9, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch loss")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
