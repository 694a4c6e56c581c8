"""Globally stable point-to-point motion models learned from demonstrations.

The model couples a residual state transform (whose quadratic latent energy
acts as a Lyapunov function) with a projected latent velocity field, so
every trajectory of the learned system runs downhill in energy and reaches
the target. The package provides data ingestion and normalization, the
differentiation engine, training, reproduction metrics with figures, and a
command-line interface (`stable-ds`).
"""

from .data import (
    Demonstration,
    FormatError,
    NormalizedDataset,
    Normalization,
    estimate_velocities,
    load_demonstrations,
    normalize,
    write_demos_csv,
)
from .diffengine import (
    DegenerateBatchError,
    Dual,
    JacobianEval,
    NumericalOverflowError,
    Tape,
    Var,
    eval_with_jacobian,
    loss_gradient,
    transform_with_jacobian,
)
from .dynamics import (
    NearSingularJacobianError,
    latent_velocity,
    lyapunov,
    lyapunov_rate,
    state_velocity,
)
from .evaluation import (
    AuditReport,
    EvalReport,
    Rollout,
    evaluate_dataset,
    rollout,
    sea,
    stability_audit,
    v_rmse,
    vector_field,
    workspace_diameter,
)
from .model import (
    FIXED_CONTRACTION,
    LEARNED,
    LatentDynamics,
    StableDsModel,
    load_model,
    save_model,
)
from .networks import (
    Layer,
    MlpParams,
    TransformSpec,
    identity_transform_spec,
    init_params,
    mlp_forward,
    transform,
)
from .training import AdamState, DivergenceError, TrainConfig, TrainResult, adam_step, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AuditReport",
    "DegenerateBatchError",
    "Demonstration",
    "DivergenceError",
    "Dual",
    "EvalReport",
    "FIXED_CONTRACTION",
    "FormatError",
    "JacobianEval",
    "LEARNED",
    "LatentDynamics",
    "Layer",
    "MlpParams",
    "NearSingularJacobianError",
    "NormalizedDataset",
    "Normalization",
    "NumericalOverflowError",
    "Rollout",
    "StableDsModel",
    "Tape",
    "TrainConfig",
    "TrainResult",
    "TransformSpec",
    "Var",
    "adam_step",
    "estimate_velocities",
    "eval_with_jacobian",
    "evaluate_dataset",
    "identity_transform_spec",
    "init_params",
    "latent_velocity",
    "load_demonstrations",
    "load_model",
    "loss_gradient",
    "lr_schedule",
    "lyapunov",
    "lyapunov_rate",
    "mlp_forward",
    "normalize",
    "rollout",
    "save_model",
    "sea",
    "stability_audit",
    "state_velocity",
    "train",
    "transform",
    "transform_with_jacobian",
    "v_rmse",
    "vector_field",
    "workspace_diameter",
    "write_demos_csv",
]
