"""Shared fixtures: crafted models and a session-scoped training cache."""

import sys

import numpy as np
import pytest

from stable_ds import data, networks, synthetic, training
from stable_ds.model import LEARNED, LatentDynamics, StableDsModel


def identity_normalization(dim=2):
    return data.Normalization(
        scale=np.ones(dim), offset=np.zeros(dim), target=np.zeros(dim)
    )


def fresh_model(seed=0, dim=2, beta=1.0, mode=LEARNED, norm=None):
    """Randomly initialized bundle over an identity normalization."""
    spec, n_net = networks.init_params(seed, dim)
    return StableDsModel(
        transform=spec,
        latent=LatentDynamics(n_net, beta=beta, mode=mode),
        normalization=norm if norm is not None else identity_normalization(dim),
    )


def contraction_identity_model(dim=2, beta=1.0, norm=None):
    """Identity transform + fixed contraction: xdot = -beta * x, exactly."""
    spec = networks.identity_transform_spec(dim)
    _, n_net = networks.init_params(0, dim)
    return StableDsModel(
        transform=spec,
        latent=LatentDynamics(n_net, beta=beta, mode="fixed-contraction"),
        normalization=norm if norm is not None else identity_normalization(dim),
    )


@pytest.fixture(scope="session")
def small_demos():
    return synthetic.make_shape("angle", n_demos=3, samples=120, seed=0)


@pytest.fixture(scope="session")
def small_dataset(small_demos):
    return data.normalize(small_demos)


@pytest.fixture(scope="session")
def trained_factory():
    """Memoized full-protocol trainings shared across acceptance tests.

    Returns a callable (shape, seed, mode, demo_index, iters) -> dict with
    the train result, the normalized dataset and the raw demonstrations.
    """
    cache = {}

    def get(shape="angle", seed=0, mode=LEARNED, demo_index=None, iters=2000):
        key = (shape, seed, mode, demo_index, iters)
        if key not in cache:
            demos = synthetic.make_shape(shape)
            if demo_index is not None:
                demos = [demos[demo_index]]
            dataset = data.normalize(demos)
            config = training.TrainConfig(seed=seed, mode=mode, max_iterations=iters)
            result = training.train(dataset, config)
            cache[key] = {"result": result, "dataset": dataset, "demos": demos}
        return cache[key]

    return get


@pytest.fixture(scope="session")
def quick_trained(small_dataset):
    """A cheap but genuinely trained model for behavioral tests."""
    config = training.TrainConfig(seed=0, max_iterations=250)
    return training.train(small_dataset, config)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
