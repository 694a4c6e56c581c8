"""Lyapunov candidate, projected latent velocity and the Jacobian pullback."""

import numpy as np
import pytest

import stable_ds.diffengine as de
from conftest import contraction_identity_model, fresh_model, identity_normalization
from stable_ds import data, dynamics, networks
from stable_ds.model import LatentDynamics, StableDsModel
from test_diffengine import singular_at_half_model


def constant_n(values):
    """A latent net that outputs the same vector everywhere."""
    values = np.asarray(values, dtype=float)
    d = len(values)
    return networks.MlpParams(
        layers=[networks.Layer(np.zeros((d, d)), values, "linear")],
        input_dim=d,
        output_dim=d,
    )


def affine_n(weight, bias):
    weight = np.asarray(weight, dtype=float)
    return networks.MlpParams(
        layers=[networks.Layer(weight, np.asarray(bias, dtype=float), "linear")],
        input_dim=weight.shape[1],
        output_dim=weight.shape[0],
    )


# ---------------------------------------------------------------------------
# Lyapunov candidate


def test_lyapunov_values():
    assert dynamics.lyapunov([0.0, 0.0]) == 0.0
    assert dynamics.lyapunov([3.0, 4.0]) == 12.5
    assert dynamics.lyapunov([-1.0, 1.0]) == 1.0


def test_lyapunov_batch_matches_scalar():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((20, 3))
    batch = dynamics.lyapunov_batch(y)
    assert np.allclose(batch, [dynamics.lyapunov(row) for row in y])
    assert (batch > 0).all()


# ---------------------------------------------------------------------------
# latent projection


def test_latent_velocity_descending_branch_passes_through():
    dyn = LatentDynamics(constant_n([-1.0, 0.5]), beta=1.0)
    out = dynamics.latent_velocity(dyn, np.array([1.0, 0.0]))
    assert np.array_equal(out, [-1.0, 0.5])


def test_latent_velocity_ascending_branch_contracts():
    dyn = LatentDynamics(constant_n([1.0, 0.0]), beta=1.0)
    out = dynamics.latent_velocity(dyn, np.array([1.0, 0.0]))
    assert np.array_equal(out, [-1.0, -0.0])


def test_latent_velocity_fixed_contraction():
    _, n_net = networks.init_params(0)
    dyn = LatentDynamics(n_net, beta=1.0, mode="fixed-contraction")
    out = dynamics.latent_velocity(dyn, np.array([0.2, -0.4]))
    assert np.allclose(out, [-0.2, 0.4])


def test_latent_velocity_zero_at_origin():
    dyn = LatentDynamics(constant_n([0.3, 0.3]), beta=2.0)
    assert np.array_equal(dynamics.latent_velocity(dyn, np.zeros(2)), np.zeros(2))


def test_latent_velocity_on_switching_surface_uses_contraction():
    # y.n = 0 exactly: the inference convention takes the -beta*y branch
    dyn = LatentDynamics(constant_n([0.0, 1.0]), beta=0.5)
    out = dynamics.latent_velocity(dyn, np.array([1.0, 0.0]))
    assert np.array_equal(out, [-0.5, -0.0])


def test_latent_velocity_expr_on_surface_keeps_learned_branch():
    # the training-time gate opens only for y.n > eps, so rows exactly on
    # the surface keep the learned field (documented convention)
    n_net = constant_n([0.0, 1.0])
    out = dynamics.latent_velocity_expr(n_net, 0.5, "learned", np.array([[1.0, 0.0]]))
    assert np.array_equal(de.raw_value(out)[0], [0.0, 1.0])


def test_latent_velocity_strictly_descending_100k_pairs():
    rng = np.random.default_rng(99)
    total = 0
    for chunk in range(100):
        n_net = affine_n(rng.standard_normal((2, 2)), rng.standard_normal(2))
        dyn = LatentDynamics(n_net, beta=float(rng.uniform(0.2, 3.0)))
        y = rng.uniform(-3.0, 3.0, size=(1000, 2))
        y = y[np.linalg.norm(y, axis=1) > 1e-9]
        ydot = dynamics.latent_velocity(dyn, y)
        s = np.sum(y * networks.mlp_forward(n_net, y), axis=-1)
        rate = np.sum(y * ydot, axis=-1)
        assert (rate < 0.0).all()
        expected = np.where((s < 0.0)[:, None], networks.mlp_forward(n_net, y), -dyn.beta * y)
        assert np.array_equal(ydot, expected)
        total += len(y)
    assert total >= 100_000 - 200


def test_latent_velocity_expr_matches_inference_off_surface():
    rng = np.random.default_rng(5)
    _, n_net = networks.init_params(3)
    dyn = LatentDynamics(n_net, beta=1.0)
    y = rng.uniform(-1.0, 1.0, size=(200, 2))
    s = np.sum(y * networks.mlp_forward(n_net, y), axis=-1)
    y = y[np.abs(s) > 1e-6]
    expr = de.raw_value(dynamics.latent_velocity_expr(n_net, 1.0, "learned", y))
    assert np.allclose(expr, dynamics.latent_velocity(dyn, y), rtol=1e-12)


# ---------------------------------------------------------------------------
# pullback to workspace velocities


def test_state_velocity_identity_transform_equals_latent():
    model = contraction_identity_model()
    x = np.array([0.4, -0.8])
    v = dynamics.state_velocity(model, x)
    assert np.allclose(v, -x, rtol=1e-12)


def test_state_velocity_diagonal_jacobian():
    # m1 pinned to the constants (1, 3): y = (2 x1, 4 x2), J = diag(2, 4).
    # At x = (-1, -1), fixed contraction gives ydot = (2, 4) and xdot = (1, 1).
    biases = np.array([np.log(np.expm1(1.0)), np.log(np.expm1(3.0))])
    m1 = networks.MlpParams(
        layers=[networks.Layer(np.zeros((2, 2)), biases, "softplus")],
        input_dim=2,
        output_dim=2,
    )
    m2 = networks.MlpParams(
        layers=[networks.Layer(np.zeros((2, 2)), None, "linear")],
        input_dim=2,
        output_dim=2,
    )
    spec = networks.TransformSpec(m1, m2, state_dim=2)
    _, n_net = networks.init_params(0)
    model = StableDsModel(
        transform=spec,
        latent=LatentDynamics(n_net, beta=1.0, mode="fixed-contraction"),
        normalization=identity_normalization(2),
    )
    y, jac = de.transform_with_jacobian(spec, np.array([[-1.0, -1.0]]))
    assert np.allclose(y[0], [-2.0, -4.0], rtol=1e-12)
    assert np.allclose(jac[0], np.diag([2.0, 4.0]), rtol=1e-12)
    assert np.allclose(dynamics.state_velocity(model, [-1.0, -1.0]), [1.0, 1.0], rtol=1e-12)


def test_state_velocity_fd_consistency(quick_trained):
    model = quick_trained.model
    rng = np.random.default_rng(17)
    for x in rng.uniform(-20.0, 20.0, size=(5, 2)):
        xdot = dynamics.state_velocity(model, x)
        xn = model.normalization.normalize_states(x)
        vn = model.normalization.normalize_velocities(xdot)
        eps = 1e-6
        y0 = networks.transform(model.transform, xn)
        y1 = networks.transform(model.transform, xn + eps * vn)
        ydot_fd = (y1 - y0) / eps
        ydot = dynamics.latent_velocity(model.latent, y0)
        assert np.allclose(ydot_fd, ydot, atol=1e-3 * max(1.0, float(np.abs(ydot).max())))


def test_state_velocity_solve_residual():
    for seed in range(5):
        model = fresh_model(seed=seed)
        rng = np.random.default_rng(seed + 50)
        xn = rng.uniform(-1.0, 1.0, size=2)
        vn = dynamics.velocity_normalized(model, xn)
        y, jac = de.transform_with_jacobian(model.transform, xn[None, :])
        ydot = dynamics.latent_velocity(model.latent, y[0])
        assert np.linalg.norm(jac[0] @ vn - ydot) <= 1e-10 * max(np.linalg.norm(ydot), 1e-30)


def test_state_velocity_zero_at_target():
    norm = data.Normalization(
        scale=np.array([7.0, 3.0]), offset=np.array([2.0, -1.0]), target=np.array([2.0, -1.0])
    )
    model = fresh_model(seed=21, norm=norm)
    v = dynamics.state_velocity(model, np.array([2.0, -1.0]))
    assert np.array_equal(v, np.zeros(2))


def test_near_singular_error_carries_state_and_det():
    model = singular_at_half_model()
    with pytest.raises(dynamics.NearSingularJacobianError) as err:
        dynamics.state_velocity(model, np.array([0.5]))
    assert err.value.x == pytest.approx([0.5])
    assert abs(err.value.det) < de.DET_EPS
    assert "0.5" in str(err.value)


def test_velocity_field_masks_singular_rows():
    model = singular_at_half_model()
    xn = np.array([[0.5], [1.5]])
    v, ok, y, det = dynamics.velocity_field_normalized(model, xn)
    assert not ok[0] and ok[1]
    assert np.isnan(v[0, 0]) and np.isfinite(v[1, 0])
    assert abs(det[0]) < de.DET_EPS


# ---------------------------------------------------------------------------
# Lyapunov rate


def test_lyapunov_rate_zero_at_target():
    model = fresh_model(seed=4)
    assert dynamics.lyapunov_rate(model, np.zeros(2)) == 0.0


def test_lyapunov_rate_negative_away_from_target(quick_trained):
    model = quick_trained.model
    rng = np.random.default_rng(31)
    x = rng.uniform(-30.0, 40.0, size=(100, 2))
    keep = np.linalg.norm(x - model.normalization.target, axis=1) > 1e-6
    for row in x[keep]:
        assert dynamics.lyapunov_rate(model, row) < 0.0


def test_lyapunov_rate_fixed_contraction_is_minus_two_v():
    model = fresh_model(seed=6, mode="fixed-contraction")
    rng = np.random.default_rng(61)
    for x in rng.uniform(-1.0, 1.0, size=(10, 2)):
        y = networks.transform(model.transform, x)
        rate = dynamics.lyapunov_rate(model, x)
        assert rate == pytest.approx(-2.0 * dynamics.lyapunov(y), rel=1e-12)
        assert rate < 0.0
