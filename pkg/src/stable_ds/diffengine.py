"""Exact derivatives for the motion-model stack.

Two cooperating mechanisms:

* forward mode -- :class:`Dual` carries a value together with one tangent per
  state dimension, so a single pass through the state transform yields both
  y = g(x) and the full input Jacobian dy/dx.
* reverse mode -- :class:`Tape`/:class:`Var` record array operations so the
  scalar training loss (which contains that Jacobian, inverted) can be pulled
  back to every network parameter in one sweep.

Dual arithmetic is written in terms of the dispatching primitives below, so
it works over plain arrays (inference) or over tape variables (training).
That is how parameter gradients flow through the Jacobian entries: the
tangent arithmetic itself is recorded on the tape, and the d<=3 matrix
inverse is recorded as its closed-form cofactor expression.

Values are float64 throughout; batched quantities put the batch first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DET_EPS = 1e-10  # |det dy/dx| below this counts as near-singular
GATE_EPS = 1e-12  # switching threshold of the latent projection gate


class NumericalOverflowError(ArithmeticError):
    """A network layer produced a non-finite intermediate value."""


class DegenerateBatchError(ArithmeticError):
    """Every sample of a batch hit a near-singular Jacobian."""


# ---------------------------------------------------------------------------
# reverse mode


class _Node:
    __slots__ = ("parents", "pull")

    def __init__(self, parents, pull):
        self.parents = parents
        self.pull = pull  # callable(out_grad) -> tuple of parent grads


class Tape:
    """Append-only operation record; parents always precede children."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value) -> "Var":
        return self._record(np.asarray(value, dtype=float), (), None)

    def _record(self, value, parents, pull) -> "Var":
        self._nodes.append(_Node(parents, pull))
        return Var(self, len(self._nodes) - 1, value)

    def gradient(self, output: "Var", leaves) -> list[np.ndarray]:
        """d(output)/d(leaf) for a scalar-valued output.

        One reverse sweep over the record; each node is visited exactly once,
        accumulating into its parents, so diamond-shaped graphs come out
        without double counting.
        """
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        if np.ndim(output.value) != 0:
            raise ValueError("gradient target must be scalar")
        grads: list = [None] * len(self._nodes)
        grads[output.index] = np.ones(())
        for index in range(output.index, -1, -1):
            g = grads[index]
            node = self._nodes[index]
            if g is None or node.pull is None:
                continue
            for parent, contribution in zip(node.parents, node.pull(g)):
                if grads[parent] is None:
                    grads[parent] = contribution
                else:
                    grads[parent] = grads[parent] + contribution
        out = []
        for leaf in leaves:
            g = grads[leaf.index]
            out.append(np.zeros_like(leaf.value) if g is None else np.asarray(g))
        return out


class Var:
    """Handle to one tape node; ndarray valued."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(#{self.index}, shape={np.shape(self.value)})"


# ---------------------------------------------------------------------------
# forward mode


class Dual:
    """Value plus one directional derivative per state dimension."""

    __slots__ = ("value", "tangents")

    def __init__(self, value, tangents):
        self.value = value
        self.tangents = tuple(tangents)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Dual(d={len(self.tangents)}, shape={np.shape(raw_value(self))})"


def seed_dual(x: np.ndarray) -> Dual:
    """Wrap states (..., d) with identity tangents along the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    eye = np.eye(d)
    return Dual(x, tuple(np.broadcast_to(eye[k], x.shape) for k in range(d)))


def raw_value(x):
    """Plain ndarray behind x, unwrapping Dual primals and Var values."""
    while isinstance(x, (Dual, Var)):
        x = x.value
    return x


def is_taped(x) -> bool:
    while isinstance(x, Dual):
        x = x.value
    return isinstance(x, Var)


# ---------------------------------------------------------------------------
# primitive operations (dispatch on Dual / Var / ndarray)


def _unbroadcast(grad, shape):
    if shape == ():
        return np.asarray(grad).sum()
    g = np.asarray(grad)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, fwd, da, db):
    tape = a.tape if isinstance(a, Var) else b.tape
    av, bv = raw_value(a), raw_value(b)
    value = fwd(av, bv)
    parents = []
    pulls = []
    if isinstance(a, Var):
        parents.append(a.index)
        pulls.append(lambda g: _unbroadcast(da(g, av, bv), np.shape(av)))
    if isinstance(b, Var):
        parents.append(b.index)
        pulls.append(lambda g: _unbroadcast(db(g, av, bv), np.shape(bv)))
    return tape._record(value, tuple(parents), lambda g: tuple(p(g) for p in pulls))


def _unary(x, fwd, dfd):
    xv = raw_value(x)
    value = fwd(xv)
    return x.tape._record(value, (x.index,), lambda g: (dfd(g, xv, value),))


def _split(x):
    if isinstance(x, Dual):
        return x.value, x.tangents
    return x, None


def add(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = _split(a)
        bv, bt = _split(b)
        if at is None:
            tangents = bt
        elif bt is None:
            tangents = at
        else:
            tangents = tuple(add(x, y) for x, y in zip(at, bt, strict=True))
        return Dual(add(av, bv), tangents)
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(a, b, np.add, lambda g, av, bv: g, lambda g, av, bv: g)
    return a + b


def sub(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = _split(a)
        bv, bt = _split(b)
        if at is None:
            tangents = tuple(neg(y) for y in bt)
        elif bt is None:
            tangents = at
        else:
            tangents = tuple(sub(x, y) for x, y in zip(at, bt, strict=True))
        return Dual(sub(av, bv), tangents)
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(a, b, np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g)
    return a - b


def mul(a, b):
    """Elementwise (Hadamard) product with the usual product rule."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = _split(a)
        bv, bt = _split(b)
        value = mul(av, bv)
        if at is None:
            tangents = tuple(mul(av, y) for y in bt)
        elif bt is None:
            tangents = tuple(mul(x, bv) for x in at)
        else:
            tangents = tuple(
                add(mul(x, bv), mul(av, y)) for x, y in zip(at, bt, strict=True)
            )
        return Dual(value, tangents)
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(
            a, b, np.multiply, lambda g, av, bv: g * bv, lambda g, av, bv: g * av
        )
    return a * b


def div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = _split(a)
        bv, bt = _split(b)
        value = div(av, bv)
        if bt is None:
            tangents = tuple(div(x, bv) for x in at)
        else:
            if at is None:
                at = (0.0,) * len(bt)
            tangents = tuple(
                div(sub(x, mul(value, y)), bv) for x, y in zip(at, bt, strict=True)
            )
        return Dual(value, tangents)
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(
            a,
            b,
            np.divide,
            lambda g, av, bv: g / bv,
            lambda g, av, bv: -g * av / (bv * bv),
        )
    return a / b


def neg(x):
    if isinstance(x, Dual):
        return Dual(neg(x.value), tuple(neg(t) for t in x.tangents))
    if isinstance(x, Var):
        return _unary(x, np.negative, lambda g, xv, v: -g)
    return -x


def _softplus_raw(x):
    return np.logaddexp(0.0, x)


def _sigmoid_raw(x):
    return 0.5 * (np.tanh(0.5 * np.asarray(x)) + 1.0)


def tanh(x):
    if isinstance(x, Dual):
        value = tanh(x.value)
        deriv = sub(1.0, mul(value, value))
        return Dual(value, tuple(mul(deriv, t) for t in x.tangents))
    if isinstance(x, Var):
        return _unary(x, np.tanh, lambda g, xv, v: g * (1.0 - v * v))
    return np.tanh(x)


def sigmoid(x):
    if isinstance(x, Dual):
        value = sigmoid(x.value)
        deriv = mul(value, sub(1.0, value))
        return Dual(value, tuple(mul(deriv, t) for t in x.tangents))
    if isinstance(x, Var):
        return _unary(x, _sigmoid_raw, lambda g, xv, v: g * v * (1.0 - v))
    return _sigmoid_raw(x)


def softplus(x):
    if isinstance(x, Dual):
        deriv = sigmoid(x.value)
        return Dual(softplus(x.value), tuple(mul(deriv, t) for t in x.tangents))
    if isinstance(x, Var):
        return _unary(x, _softplus_raw, lambda g, xv, v: g * _sigmoid_raw(xv))
    return _softplus_raw(x)


def relu(x):
    # subgradient convention: derivative 0 at the kink
    if isinstance(x, Dual):
        mask = (raw_value(x.value) > 0.0).astype(float)
        return Dual(relu(x.value), tuple(mul(mask, t) for t in x.tangents))
    if isinstance(x, Var):
        return _unary(
            x,
            lambda v: np.maximum(v, 0.0),
            lambda g, xv, v: g * (xv > 0.0),
        )
    return np.maximum(x, 0.0)


def linear(x, w):
    """Row-batched x @ w.T for samples x (..., n_in) and weights w (n_out, n_in)."""
    if isinstance(x, Dual):
        return Dual(linear(x.value, w), tuple(linear(t, w) for t in x.tangents))
    if isinstance(x, Var) or isinstance(w, Var):
        return _binary(
            x,
            w,
            lambda xv, wv: xv @ wv.T,
            lambda g, xv, wv: g @ wv,
            lambda g, xv, wv: g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1]),
        )
    return x @ np.asarray(w).T


def sum_last(x):
    """Sum over the trailing axis (rows of a batch)."""
    if isinstance(x, Var):
        return _unary(
            x,
            lambda v: v.sum(axis=-1),
            lambda g, xv, v: np.broadcast_to(np.expand_dims(g, -1), xv.shape),
        )
    return np.asarray(x).sum(axis=-1)


def dot_rows(a, b):
    """Row-wise dot product of two (..., n) operands."""
    return sum_last(mul(a, b))


def sum_all(x):
    if isinstance(x, Var):
        return _unary(
            x,
            lambda v: np.asarray(v.sum()),
            lambda g, xv, v: np.broadcast_to(g, xv.shape),
        )
    return np.asarray(x).sum()


def col(x, j: int):
    """Column j of a (..., n) operand."""
    if isinstance(x, Var):
        xv = raw_value(x)

        def pull(g):
            out = np.zeros_like(xv)
            out[..., j] = g
            return (out,)

        return x.tape._record(xv[..., j], (x.index,), pull)
    return np.asarray(x)[..., j]


def keep_where(x, mask, fill):
    """x where mask else fill; gradient passes only where mask holds."""
    m = np.asarray(mask)
    if isinstance(x, Var):
        return _unary(
            x,
            lambda v: np.where(m, v, fill),
            lambda g, xv, v: g * m,
        )
    return np.where(m, x, fill)


# ---------------------------------------------------------------------------
# Jacobian evaluation


@dataclass(frozen=True)
class JacobianEval:
    """Transform output and its input Jacobian at one state, from one pass."""

    y: np.ndarray
    jac: np.ndarray
    x: np.ndarray


def transform_with_jacobian(spec, states):
    """Batched y = g(x) and dy/dx: states (..., d) -> y (..., d), jac (..., d, d)."""
    from . import networks  # built on this module's primitives

    states = np.asarray(states, dtype=float)
    if states.shape[-1] != spec.state_dim:
        raise ValueError(
            f"states have dimension {states.shape[-1]}, transform expects {spec.state_dim}"
        )
    yd = networks.transform(spec, seed_dual(states))
    # tangent k holds dy_j/dx_k, so stacking over k along the last axis
    # yields jac[..., j, k].
    return yd.value, np.stack(yd.tangents, axis=-1)


def eval_with_jacobian(spec, x) -> JacobianEval:
    """Exact y = g(x) and J = dy/dx for one state vector."""
    x = np.asarray(x, dtype=float)
    y, jac = transform_with_jacobian(spec, x)
    return JacobianEval(y=y, jac=jac, x=x)


# ---------------------------------------------------------------------------
# loss gradient


@dataclass
class LossGradient:
    """Mean-squared velocity error and its parameter gradients."""

    loss: float
    grads: list[np.ndarray]
    skipped: int


def _as_batch(batch, d):
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        states, velocities = batch
    else:
        pairs = list(batch)
        if not pairs:
            raise ValueError("batch is empty")
        states = np.stack([np.asarray(x, dtype=float) for x, _ in pairs])
        velocities = np.stack([np.asarray(v, dtype=float) for _, v in pairs])
    states = np.asarray(states, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    if states.size == 0:
        raise ValueError("batch is empty")
    if states.shape != velocities.shape or states.shape[-1] != d:
        raise ValueError(
            f"batch shapes {states.shape}/{velocities.shape} do not match state dim {d}"
        )
    return states, velocities


def _minor2(m, r0, r1, c0, c1):
    return sub(mul(m[r0][c0], m[r1][c1]), mul(m[r0][c1], m[r1][c0]))


def _pullback_velocity(jac_cols, ydot, d):
    """Taped solve of (dy/dx) xdot = ydot via the closed-form cofactor inverse.

    jac_cols[k][..., j] holds dy_j/dx_k.  Returns (xdot components, det,
    keep mask); near-singular rows are masked out and see det replaced by 1
    so no gradient flows through them.
    """
    m = [[col(jac_cols[c], r) for c in range(d)] for r in range(d)]
    yd = [col(ydot, j) for j in range(d)]
    if d == 1:
        det = m[0][0]
    elif d == 2:
        det = _minor2(m, 0, 1, 0, 1)
    elif d == 3:
        det = add(
            sub(
                mul(m[0][0], _minor2(m, 1, 2, 1, 2)),
                mul(m[0][1], _minor2(m, 1, 2, 0, 2)),
            ),
            mul(m[0][2], _minor2(m, 1, 2, 0, 1)),
        )
    else:
        raise ValueError(f"closed-form inverse supports d <= 3, got d={d}")
    keep = np.abs(raw_value(det)) >= DET_EPS
    safe_det = keep_where(det, keep, 1.0)
    if d == 1:
        xdot = [div(yd[0], safe_det)]
    elif d == 2:
        xdot = [
            div(sub(mul(m[1][1], yd[0]), mul(m[0][1], yd[1])), safe_det),
            div(sub(mul(m[0][0], yd[1]), mul(m[1][0], yd[0])), safe_det),
        ]
    else:
        # adjugate rows: x_i = sum_j cof(j, i) ydot_j / det
        sign = lambda i, j: 1.0 if (i + j) % 2 == 0 else -1.0
        rows = (1, 2), (0, 2), (0, 1)
        xdot = []
        for i in range(3):
            acc = None
            c0, c1 = rows[i]
            for j in range(3):
                r0, r1 = rows[j]
                term = mul(sign(j, i), mul(_minor2(m, r0, r1, c0, c1), yd[j]))
                acc = term if acc is None else add(acc, term)
            xdot.append(div(acc, safe_det))
    return xdot, det, keep


def loss_gradient(model, batch) -> LossGradient:
    """Gradient of the mean squared velocity error over one minibatch.

    The whole computation -- transform, input Jacobian, latent projection,
    cofactor inverse, residual -- is recorded on one tape and pulled back to
    every parameter of the three networks in a single reverse sweep.
    """
    from . import dynamics, networks

    d = model.state_dim
    states, velocities = _as_batch(batch, d)
    tape = Tape()
    m1 = networks.lift_params(model.transform.m1, tape)
    m2 = networks.lift_params(model.transform.m2, tape)
    n = networks.lift_params(model.latent.n, tape)
    spec = networks.TransformSpec(m1, m2, state_dim=d)

    yd = networks.transform(spec, seed_dual(states))
    ydot = dynamics.latent_velocity_expr(n, model.latent.beta, model.latent.mode, yd.value)
    xdot, _, keep = _pullback_velocity(yd.tangents, ydot, d)

    kept = int(keep.sum())
    if kept == 0:
        raise DegenerateBatchError(
            f"all {len(states)} batch samples have |det dy/dx| < {DET_EPS}"
        )
    sq = None
    for j in range(d):
        r = sub(xdot[j], velocities[:, j])
        term = mul(r, r)
        sq = term if sq is None else add(sq, term)
    loss = mul(sum_all(mul(sq, keep.astype(float))), 1.0 / kept)

    leaves = [
        p
        for net in (m1, m2, n)
        for p in networks.param_leaves(net)
    ]
    grads = tape.gradient(loss, leaves)
    return LossGradient(loss=float(loss.value), grads=grads, skipped=len(states) - kept)
