"""Minibatch Adam over the three networks.

Each iteration draws the next slice of an epoch-wise shuffled sample order,
evaluates the velocity-matching loss gradient, and applies one Adam update
to the whole parameter bundle. The learning rate decays per epoch. The
returned model carries the parameters of the best (lowest finite loss)
iteration, not necessarily the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .data import NormalizedDataset
from .model import LatentDynamics, StableDsModel, bundle_leaves, replace_parameters
from . import networks

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DIVERGENCE_PATIENCE = 10  # consecutive non-finite losses before giving up


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay: float = 0.99
    max_iterations: int = 2000
    batch_size: int = 64
    beta: float = 1.0
    seed: int = 0
    mode: str = "learned"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class AdamState:
    """First/second moment estimates per parameter leaf plus the step count."""

    mean: list[np.ndarray]
    variance: list[np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, leaves) -> "AdamState":
        return cls(
            mean=[np.zeros_like(p) for p in leaves],
            variance=[np.zeros_like(p) for p in leaves],
        )


def adam_step(state: AdamState, params, grads, lr: float):
    """One Adam update; returns (new params, new state), inputs untouched."""
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_mean = []
    new_var = []
    new_params = []
    for p, g, m, v in zip(params, grads, state.mean, state.variance, strict=True):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        new_mean.append(m)
        new_var.append(v)
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
    return new_params, AdamState(new_mean, new_var, step=t)


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.decay**epoch


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    lr: float
    loss: float
    skipped: int


@dataclass
class TrainResult:
    model: StableDsModel
    history: list[IterationRecord]
    best_iteration: int
    best_loss: float


class DivergenceError(RuntimeError):
    """Training lost its footing; carries the last finite snapshot."""

    def __init__(self, message, model, history):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass
class _Shuffler:
    """Epoch-wise sample order without replacement."""

    rng: np.random.Generator
    count: int
    epoch: int = -1
    _order: np.ndarray = field(default=None, repr=False)
    _cursor: int = 0

    def next_batch(self, size: int) -> np.ndarray:
        if self._order is None or self._cursor >= self.count:
            self._order = self.rng.permutation(self.count)
            self._cursor = 0
            self.epoch += 1
        idx = self._order[self._cursor : self._cursor + size]
        self._cursor += len(idx)
        return idx


def train(dataset: NormalizedDataset, config: TrainConfig, progress=None) -> TrainResult:
    """Fit a model to a normalized dataset.

    progress, when given, is called once per iteration with
    (iteration, epoch, lr, loss, skipped).
    """
    states, velocities = dataset.stacked()
    spec, n_net = networks.init_params(config.seed, dataset.state_dim)
    model = StableDsModel(
        transform=spec,
        latent=LatentDynamics(n_net, beta=config.beta, mode=config.mode),
        normalization=dataset.normalization,
    )
    leaves = bundle_leaves(model)
    adam = AdamState.init(leaves)
    shuffler = _Shuffler(np.random.default_rng(config.seed), len(states))

    history: list[IterationRecord] = []
    best_loss = math.inf
    best_leaves = [p.copy() for p in leaves]
    best_iteration = -1
    last_finite = best_leaves
    bad_streak = 0

    for iteration in range(config.max_iterations):
        idx = shuffler.next_batch(config.batch_size)
        lr = lr_schedule(config, shuffler.epoch)
        try:
            result = de.loss_gradient(model, (states[idx], velocities[idx]))
            loss, grads, skipped = result.loss, result.grads, result.skipped
        except de.DegenerateBatchError:
            loss, grads, skipped = math.nan, None, len(idx)
        record = IterationRecord(iteration, shuffler.epoch, lr, loss, skipped)
        history.append(record)
        if progress is not None:
            progress(iteration, shuffler.epoch, lr, loss, skipped)

        if math.isfinite(loss):
            bad_streak = 0
            last_finite = leaves
            if loss < best_loss:
                best_loss = loss
                best_leaves = leaves
                best_iteration = iteration
        else:
            bad_streak += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"loss non-finite for {bad_streak} consecutive iterations "
                    f"(iteration {iteration})",
                    replace_parameters(model, last_finite),
                    history,
                )

        if grads is not None:
            leaves, adam = adam_step(adam, leaves, grads, lr)
            model = replace_parameters(model, leaves)

    if best_iteration < 0:
        # max_iterations below the divergence patience and nothing finite
        raise DivergenceError(
            "no finite loss seen", replace_parameters(model, last_finite), history
        )
    return TrainResult(
        model=replace_parameters(model, best_leaves),
        history=history,
        best_iteration=best_iteration,
        best_loss=best_loss,
    )
