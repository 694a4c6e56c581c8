"""Deployable model bundle and its JSON persistence (schema stable-ds-v1).

A saved model is a single JSON document holding the transform networks, the
latent dynamics network with its contraction rate, and the normalization
that ties training coordinates back to the workspace. Key order is fixed so
repeated saves of the same model are byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Normalization
from .networks import Layer, MlpParams, TransformSpec

SCHEMA_VERSION = "stable-ds-v1"

LEARNED = "learned"
FIXED_CONTRACTION = "fixed-contraction"
MODES = (LEARNED, FIXED_CONTRACTION)


@dataclass
class LatentDynamics:
    """Latent velocity model: learned field n with contraction fallback."""

    n: MlpParams
    beta: float = 1.0
    mode: str = LEARNED

    def __post_init__(self):
        self.beta = float(self.beta)
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class StableDsModel:
    """Everything needed to reproduce motions: transform, dynamics, scaling."""

    transform: TransformSpec
    latent: LatentDynamics
    normalization: Normalization

    @property
    def state_dim(self) -> int:
        return self.transform.state_dim


def replace_parameters(model: StableDsModel, leaves) -> StableDsModel:
    """New model with parameters drawn from a flat leaf list (m1, m2, n order)."""
    from . import networks

    it = iter(leaves)
    m1 = networks.rebuild_mlp(model.transform.m1, it)
    m2 = networks.rebuild_mlp(model.transform.m2, it)
    n = networks.rebuild_mlp(model.latent.n, it)
    return StableDsModel(
        transform=TransformSpec(m1, m2, state_dim=model.state_dim),
        latent=LatentDynamics(n, beta=model.latent.beta, mode=model.latent.mode),
        normalization=model.normalization,
    )


def bundle_leaves(model: StableDsModel) -> list[np.ndarray]:
    """Flat parameter list in the canonical m1, m2, n order."""
    from . import networks

    return [
        p
        for net in (model.transform.m1, model.transform.m2, model.latent.n)
        for p in networks.param_leaves(net)
    ]


# ---------------------------------------------------------------------------
# persistence


def _mlp_to_dict(params: MlpParams) -> dict:
    return {
        "input_dim": params.input_dim,
        "output_dim": params.output_dim,
        "layers": [
            {
                "weight": layer.weight.tolist(),
                "bias": None if layer.bias is None else layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in params.layers
        ],
    }


def _mlp_from_dict(obj: dict) -> MlpParams:
    layers = [
        Layer(
            np.asarray(entry["weight"], dtype=float),
            None if entry["bias"] is None else np.asarray(entry["bias"], dtype=float),
            entry["activation"],
        )
        for entry in obj["layers"]
    ]
    return MlpParams(layers, int(obj["input_dim"]), int(obj["output_dim"]))


def model_to_dict(model: StableDsModel) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "state_dim": model.state_dim,
        "beta": model.latent.beta,
        "mode": model.latent.mode,
        "normalization": {
            "scale": model.normalization.scale.tolist(),
            "offset": model.normalization.offset.tolist(),
            "target": model.normalization.target.tolist(),
        },
        "m1": _mlp_to_dict(model.transform.m1),
        "m2": _mlp_to_dict(model.transform.m2),
        "n": _mlp_to_dict(model.latent.n),
    }


def model_from_dict(obj: dict) -> StableDsModel:
    version = obj.get("version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {version!r}, expected {SCHEMA_VERSION!r}")
    d = int(obj["state_dim"])
    norm = obj["normalization"]
    return StableDsModel(
        transform=TransformSpec(
            _mlp_from_dict(obj["m1"]), _mlp_from_dict(obj["m2"]), state_dim=d
        ),
        latent=LatentDynamics(
            _mlp_from_dict(obj["n"]), beta=float(obj["beta"]), mode=obj["mode"]
        ),
        normalization=Normalization(
            scale=np.asarray(norm["scale"], dtype=float),
            offset=np.asarray(norm["offset"], dtype=float),
            target=np.asarray(norm["target"], dtype=float),
        ),
    )


def write_text_atomic(path, text: str) -> Path:
    """Write via a sibling temp file and rename, so readers never see halves."""
    path = Path(path)
    parent = path.parent or Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_model(model: StableDsModel, path) -> Path:
    return write_text_atomic(path, json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> StableDsModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such model file: {path}")
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: invalid model JSON: {err}") from None
    return model_from_dict(obj)
