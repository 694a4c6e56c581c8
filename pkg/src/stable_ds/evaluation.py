"""Reproduction and diagnostics for learned motion models.

Rollouts integrate the learned field forward in normalized coordinates and
report back in workspace units. Metrics follow the reproduction protocol:
swept error area between demo and reproduction, velocity RMSE at the
demonstrated states, plus a sampled stability audit of the energy descent.

Per-demo work is independent; evaluate_dataset fans out over a thread pool
capped by the STABLE_DS_THREADS environment variable, with deterministic
output ordering either way.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import diffengine as de
from . import dynamics, networks
from .data import Demonstration, Normalization
from .model import StableDsModel

DIVERGENCE_BOUND = 10.0  # multiples of the normalized bounding box
CONVERGENCE_FRACTION = 0.01  # of the workspace diameter
LYAPUNOV_SLACK = 1e-8  # per-step tolerance for V monotonicity counts


def workspace_diameter(norm: Normalization) -> float:
    """Diameter of the demonstrated workspace: 2 * |per-dimension scale|."""
    return 2.0 * float(np.linalg.norm(norm.scale))


# ---------------------------------------------------------------------------
# rollout


@dataclass
class Rollout:
    """One integrated trajectory in workspace units."""

    states: np.ndarray  # (T, d)
    velocities: np.ndarray  # (T, d)
    converged: bool
    steps_to_converge: int | None
    diverged: bool = False  # left the 10x normalized box
    aborted: bool = False  # stopped early on a singular Jacobian

    def __len__(self):
        return len(self.states)


def _euler_step(model, xn, dt):
    v = dynamics.velocity_normalized(model, xn)
    return xn + dt * v, v


def _rk4_step(model, xn, dt):
    k1 = dynamics.velocity_normalized(model, xn)
    k2 = dynamics.velocity_normalized(model, xn + 0.5 * dt * k1)
    k3 = dynamics.velocity_normalized(model, xn + 0.5 * dt * k2)
    k4 = dynamics.velocity_normalized(model, xn + dt * k3)
    return xn + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


_STEPPERS = {"euler": _euler_step, "rk4": _rk4_step}


def rollout(
    model: StableDsModel,
    x0,
    steps: int,
    dt: float,
    method: str = "euler",
    perturb_seed: int = 0,
) -> Rollout:
    """Integrate the learned field from x0 (workspace units) for `steps` steps.

    Fixed-step integration in normalized coordinates, forward Euler by
    default. Convergence means coming within 1% of the workspace diameter of
    the target at any step. Leaving the 10x normalized box sets the diverged
    flag and truncates. A near-singular Jacobian is retried once from a
    1e-6-perturbed state, then truncates with the aborted flag.
    """
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if method not in _STEPPERS:
        raise ValueError(f"unknown method {method!r}, expected one of {sorted(_STEPPERS)}")
    step = _STEPPERS[method]
    norm = model.normalization
    rng = np.random.default_rng(perturb_seed)
    threshold = CONVERGENCE_FRACTION * workspace_diameter(norm)

    xn = norm.normalize_states(np.asarray(x0, dtype=float))
    states = np.empty((steps, model.state_dim))
    velocities = np.empty_like(states)
    steps_to_converge = None
    diverged = False
    aborted = False
    count = 0
    for k in range(steps):
        states[k] = xn
        if steps_to_converge is None:
            distance = float(np.linalg.norm(norm.denormalize_states(xn) - norm.target))
            if distance <= threshold:
                steps_to_converge = k
        try:
            xn_next, v = step(model, xn, dt)
        except dynamics.NearSingularJacobianError:
            nudged = xn + 1e-6 * rng.standard_normal(model.state_dim)
            try:
                xn_next, v = step(model, nudged, dt)
            except dynamics.NearSingularJacobianError:
                if k == 0:
                    raise
                aborted = True
                break
            xn = nudged
            states[k] = xn
        velocities[k] = v
        count = k + 1
        if np.max(np.abs(xn_next)) > DIVERGENCE_BOUND:
            diverged = True
            break
        xn = xn_next

    return Rollout(
        states=norm.denormalize_states(states[:count]),
        velocities=norm.denormalize_velocities(velocities[:count]),
        converged=steps_to_converge is not None,
        steps_to_converge=steps_to_converge,
        diverged=diverged,
        aborted=aborted,
    )


# ---------------------------------------------------------------------------
# metrics


def _states_of(trajectory) -> np.ndarray:
    states = getattr(trajectory, "states", trajectory)
    return np.asarray(states, dtype=float)


def _triangle_areas(p, q, r):
    u = q - p
    w = r - p
    if p.shape[-1] == 2:
        return 0.5 * np.abs(u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0])
    return 0.5 * np.linalg.norm(np.cross(u, w), axis=-1)


def sea(demo, repro) -> float:
    """Swept error area between two equally long trajectories.

    Sum over segments of the area of the quadrilateral spanned by
    consecutive demo and repro points, each quad measured as the sum of two
    triangle areas. Both diagonal splits are averaged so the result is
    symmetric in its arguments and insensitive to traversal order.
    """
    a = _states_of(demo)
    b = _states_of(repro)
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ValueError("need at least two states per trajectory")
    p0, p1 = a[:-1], a[1:]
    q0, q1 = b[:-1], b[1:]
    first = _triangle_areas(p0, p1, q1) + _triangle_areas(p0, q1, q0)
    second = _triangle_areas(p1, q1, q0) + _triangle_areas(p1, q0, p0)
    return float(np.sum(0.5 * (first + second)))


def _velocity_errors(demo: Demonstration, model: StableDsModel):
    """(v_rmse, skipped count) with model velocities taken at demo states."""
    norm = model.normalization
    xn = norm.normalize_states(demo.states)
    vn, ok, _, _ = dynamics.velocity_field_normalized(model, xn)
    skipped = int((~ok).sum())
    if skipped == len(demo.states):
        return math.nan, skipped
    diff = norm.denormalize_velocities(vn[ok]) - demo.velocities[ok]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1)))), skipped


def v_rmse(demo: Demonstration, model: StableDsModel) -> float:
    """sqrt(mean |xdot_model(x_k) - xdot_k|^2) in workspace units/s.

    Near-singular states are skipped; use _velocity_errors for the count.
    """
    return _velocity_errors(demo, model)[0]


def _lyapunov_violations(model: StableDsModel, states) -> int:
    """Count V increases beyond tolerance along a workspace trajectory."""
    if len(states) < 2:
        return 0
    xn = model.normalization.normalize_states(states)
    y = networks.transform(model.transform, xn)
    v = dynamics.lyapunov_batch(y)
    return int(np.sum(v[1:] > v[:-1] + LYAPUNOV_SLACK))


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclass
class DemoMetrics:
    index: int
    sea: float
    v_rmse: float
    converged: bool
    steps_to_converge: int | None
    lyapunov_violations: int
    skipped_samples: int


@dataclass
class EvalReport:
    per_demo: list[DemoMetrics]
    mean_sea: float
    mean_v_rmse: float
    convergence_fraction: float
    lyapunov_violations: int

    def to_dict(self) -> dict:
        return {
            "per_demo": [asdict(m) for m in self.per_demo],
            "mean_sea": self.mean_sea,
            "mean_v_rmse": self.mean_v_rmse,
            "convergence_fraction": self.convergence_fraction,
            "lyapunov_violations": self.lyapunov_violations,
        }

    def format_table(self) -> str:
        header = f"{'demo':>6} {'sea':>14} {'v_rmse':>12} {'conv':>6} {'steps':>7} {'viol':>6} {'skip':>6}"
        lines = [header, "-" * len(header)]
        for m in self.per_demo:
            steps = "-" if m.steps_to_converge is None else str(m.steps_to_converge)
            lines.append(
                f"{m.index:>6} {m.sea:>14.6g} {m.v_rmse:>12.6g} "
                f"{'yes' if m.converged else 'no':>6} {steps:>7} "
                f"{m.lyapunov_violations:>6} {m.skipped_samples:>6}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'mean':>6} {self.mean_sea:>14.6g} {self.mean_v_rmse:>12.6g} "
            f"{self.convergence_fraction:>6.0%} {'':>7} {self.lyapunov_violations:>6} {'':>6}"
        )
        return "\n".join(lines) + "\n"


def report_from_dict(obj: dict) -> EvalReport:
    return EvalReport(
        per_demo=[DemoMetrics(**entry) for entry in obj["per_demo"]],
        mean_sea=float(obj["mean_sea"]),
        mean_v_rmse=float(obj["mean_v_rmse"]),
        convergence_fraction=float(obj["convergence_fraction"]),
        lyapunov_violations=int(obj["lyapunov_violations"]),
    )


def _thread_count(tasks: int) -> int:
    raw = os.environ.get("STABLE_DS_THREADS", "").strip()
    cap = None
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ValueError(f"STABLE_DS_THREADS must be an integer, got {raw!r}") from None
    workers = min(tasks, os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def evaluate_dataset(
    model: StableDsModel,
    demos,
    steps: int | None = None,
    dt: float | None = None,
    method: str = "euler",
):
    """Reproduce every demonstration and collect metrics.

    Each demo is rolled out from its own start with its own step count and
    dt unless overridden. Returns (EvalReport, rollouts) with entries in
    demo order.
    """
    demos = list(demos)
    if not demos:
        raise ValueError("no demonstrations to evaluate")
    for demo in demos:
        if demo.state_dim != model.state_dim:
            raise ValueError(
                f"demo dimension {demo.state_dim} does not match model {model.state_dim}"
            )

    def one(demo: Demonstration):
        r = rollout(
            model,
            demo.states[0],
            steps if steps is not None else len(demo.states),
            dt if dt is not None else demo.dt,
            method=method,
        )
        area = sea(demo, r) if len(r) == len(demo.states) else math.nan
        rmse, skipped = _velocity_errors(demo, model)
        metrics = DemoMetrics(
            index=demo.index,
            sea=area,
            v_rmse=rmse,
            converged=r.converged,
            steps_to_converge=r.steps_to_converge,
            lyapunov_violations=_lyapunov_violations(model, r.states),
            skipped_samples=skipped,
        )
        return metrics, r

    workers = _thread_count(len(demos))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, demos))
    else:
        results = [one(demo) for demo in demos]

    per_demo = [m for m, _ in results]
    rollouts = [r for _, r in results]
    report = EvalReport(
        per_demo=per_demo,
        mean_sea=float(np.mean([m.sea for m in per_demo])),
        mean_v_rmse=float(np.mean([m.v_rmse for m in per_demo])),
        convergence_fraction=float(np.mean([m.converged for m in per_demo])),
        lyapunov_violations=int(sum(m.lyapunov_violations for m in per_demo)),
    )
    return report, rollouts


# ---------------------------------------------------------------------------
# stability audit


@dataclass
class AuditReport:
    samples: int
    box_v_min: float
    box_v_max: float
    vdot_violations: int
    singular_count: int
    shell_v_min: float
    shell_v_max: float

    @property
    def radially_growing(self) -> bool:
        return self.shell_v_min > self.box_v_max

    @property
    def clean(self) -> bool:
        return self.vdot_violations == 0 and self.singular_count == 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["radially_growing"] = self.radially_growing
        return out


def stability_audit(model: StableDsModel, samples: int, seed: int = 0) -> AuditReport:
    """Sampled check of energy descent and radial growth.

    Draws `samples` states uniformly in twice the normalized box, evaluates
    V and Vdot = y . ydot there, and counts violations of strict descent
    plus near-singular Jacobians. A far shell at radius 10 probes radial
    unboundedness: its smallest V should clear the box's largest.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    rng = np.random.default_rng(seed)
    d = model.state_dim
    box = rng.uniform(-2.0, 2.0, size=(samples, d))
    directions = rng.standard_normal((max(64, samples // 10), d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    y, jac, ydot = dynamics._eval_normalized(model, box)
    v = dynamics.lyapunov_batch(y)
    vdot = np.sum(y * ydot, axis=-1)
    nonzero = np.any(box != 0.0, axis=1)
    det = np.linalg.det(jac)

    y_shell = networks.transform(model.transform, 10.0 * directions)
    v_shell = dynamics.lyapunov_batch(y_shell)

    return AuditReport(
        samples=samples,
        box_v_min=float(v.min()),
        box_v_max=float(v.max()),
        vdot_violations=int(np.sum(vdot[nonzero] >= 0.0)),
        singular_count=int(np.sum(np.abs(det) < de.DET_EPS)),
        shell_v_min=float(v_shell.min()),
        shell_v_max=float(v_shell.max()),
    )


# ---------------------------------------------------------------------------
# vector fields


@dataclass
class FieldSamples:
    positions: np.ndarray  # (N, d), workspace units
    velocities: np.ndarray  # (N, d), NaN rows where the Jacobian is singular
    grid_shape: tuple


def vector_field(
    model: StableDsModel,
    bounds=None,
    resolution=30,
    demos=None,
    rollouts=None,
    title: str | None = None,
):
    """Sample the learned field on a grid; for planar models also render SVG.

    bounds is a sequence of (low, high) per dimension in workspace units and
    defaults to the demonstrated box padded by 10%. Returns (FieldSamples,
    svg string or None); the SVG overlays demo and reproduction polylines
    and marks the target.
    """
    d = model.state_dim
    if np.isscalar(resolution):
        resolution = (int(resolution),) * d
    if len(resolution) != d or any(r < 2 for r in resolution):
        raise ValueError("resolution must be at least 2 per axis")
    norm = model.normalization
    if bounds is None:
        low = norm.target - 1.1 * norm.scale
        high = norm.target + 1.1 * norm.scale
        bounds = list(zip(low, high))
    if len(bounds) != d:
        raise ValueError(f"need {d} bounds pairs")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([m.reshape(-1) for m in mesh], axis=-1)

    vn, _, _, _ = dynamics.velocity_field_normalized(model, norm.normalize_states(positions))
    samples = FieldSamples(
        positions=positions,
        velocities=norm.denormalize_velocities(vn),
        grid_shape=tuple(resolution),
    )
    if d != 2:
        return samples, None
    from . import figures

    svg = figures.render_field_svg(
        samples,
        target=norm.target,
        demos=demos or (),
        rollouts=rollouts or (),
        title=title,
    )
    return samples, svg
