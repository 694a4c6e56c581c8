"""Inference-side dynamics: energy, projected latent velocity, pullback.

The latent velocity keeps the energy V(y) = 0.5 * y.y strictly decreasing
away from the origin: the learned field n(y) is used where it already
descends (y.n(y) < 0) and is replaced by the contraction -beta * y
elsewhere. The workspace velocity follows by solving J(x) xdot = ydot with
the transform Jacobian.

State-space entry points take and return workspace units; normalization is
applied internally from the model bundle.
"""

from __future__ import annotations

import numpy as np

from . import diffengine as de
from . import networks
from .model import FIXED_CONTRACTION, LatentDynamics, StableDsModel

__all__ = [
    "FIXED_CONTRACTION",
    "LatentDynamics",
    "NearSingularJacobianError",
    "latent_velocity",
    "latent_velocity_expr",
    "lyapunov",
    "lyapunov_rate",
    "state_velocity",
]


class NearSingularJacobianError(ArithmeticError):
    """The transform Jacobian is too close to singular to invert."""

    def __init__(self, x, det):
        super().__init__(
            f"|det dy/dx| = {abs(det):.3e} < {de.DET_EPS} at x = {np.asarray(x).tolist()}"
        )
        self.x = np.asarray(x, dtype=float)
        self.det = float(det)


def lyapunov(y) -> float:
    """V(y) = 0.5 * y.y; zero only at the origin, radially unbounded."""
    y = np.asarray(y, dtype=float)
    return 0.5 * float(np.dot(y, y))


def lyapunov_batch(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return 0.5 * np.sum(y * y, axis=-1)


def latent_velocity(dyn: LatentDynamics, y) -> np.ndarray:
    """Projected latent velocity for y of shape (d,) or (..., d)."""
    y = np.asarray(y, dtype=float)
    if dyn.mode == FIXED_CONTRACTION:
        return -dyn.beta * y
    n = networks.mlp_forward(dyn.n, y)
    s = np.sum(y * n, axis=-1, keepdims=True)
    return np.where(s < 0.0, n, -dyn.beta * y)


def latent_velocity_expr(n_params, beta: float, mode: str, y):
    """The projection written as one expression over diffengine operands.

    ydot = n - (n + beta * y) * step(y.n), with step treated as a constant
    gate during differentiation. Off the switching surface this matches
    latent_velocity; the gate flips to the contraction branch only for
    y.n > GATE_EPS, so rows sitting exactly on the surface keep the learned
    branch and its gradients.
    """
    if mode == FIXED_CONTRACTION:
        return de.mul(y, -float(beta))
    n = networks.mlp_forward(n_params, y)
    s = de.dot_rows(y, n)
    gate = (de.raw_value(s) > de.GATE_EPS).astype(float)[..., None]
    return de.sub(n, de.mul(de.add(n, de.mul(y, float(beta))), gate))


# ---------------------------------------------------------------------------
# state-space evaluation


def _eval_normalized(model: StableDsModel, xn):
    """y, Jacobian and latent velocity at normalized states (..., d)."""
    y, jac = de.transform_with_jacobian(model.transform, xn)
    return y, jac, latent_velocity(model.latent, y)


def velocity_normalized(model: StableDsModel, xn) -> np.ndarray:
    """Velocity in training coordinates at one normalized state."""
    xn = np.asarray(xn, dtype=float)
    if not xn.any():
        # the attractor is a fixed point by construction; skip the solve
        return np.zeros_like(xn)
    y, jac, ydot = _eval_normalized(model, xn)
    det = np.linalg.det(jac)
    if abs(det) < de.DET_EPS:
        raise NearSingularJacobianError(xn, det)
    return np.linalg.solve(jac, ydot)


def velocity_field_normalized(model: StableDsModel, xn):
    """Batched velocities plus a validity mask.

    Near-singular rows come back as NaN with mask False instead of raising,
    so sweeps over grids or whole datasets can skip and count them.
    """
    xn = np.asarray(xn, dtype=float)
    y, jac, ydot = _eval_normalized(model, xn)
    det = np.linalg.det(jac)
    ok = np.abs(det) >= de.DET_EPS
    safe = np.where(ok[..., None, None], jac, np.eye(model.state_dim))
    v = np.linalg.solve(safe, ydot[..., None])[..., 0]
    v[~ok] = np.nan
    return v, ok, y, det


def state_velocity(model: StableDsModel, x) -> np.ndarray:
    """Workspace velocity xdot = f(x) at one workspace state."""
    x = np.asarray(x, dtype=float)
    norm = model.normalization
    try:
        vn = velocity_normalized(model, norm.normalize_states(x))
    except NearSingularJacobianError as err:
        raise NearSingularJacobianError(x, err.det) from None
    return norm.denormalize_velocities(vn)


def lyapunov_rate(model: StableDsModel, x) -> float:
    """Vdot = y . ydot at one workspace state; negative away from the target."""
    xn = model.normalization.normalize_states(np.asarray(x, dtype=float))
    y, _, ydot = _eval_normalized(model, xn)
    return float(np.dot(y, ydot))
