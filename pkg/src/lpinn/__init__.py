"""Eulerian- and Lagrangian-frame physics-informed networks for 1-D
convection-dominated problems, with reference solvers and failure-mode
diagnostics (loss landscapes, snapshot singular-value decay)."""

from .diffcore import JetBatch, ParamVector, Tape, backward, hvp, seed_inputs
from .network import (
    LpinnModel,
    MlpConfig,
    PinnModel,
    default_lpinn,
    default_pinn,
    embed_periodic,
    init_params,
    lpinn_forward,
    mlp_forward,
)
from .physics import (
    CharacteristicCrossingError,
    CollocationSet,
    LossWeights,
    PdeSpec,
    loss_lpinn,
    loss_pinn,
    make_collocation,
    residual_eulerian,
    residual_lagrangian,
)
from .reference import Field, burgers_spectral, exact_convdiff, exact_convection, fft, ifft
from .training import AdamState, TrainConfig, TrainReport, adam_step, train
from .analysis import (
    ErrorReport,
    hessian_top2,
    interp_quadratic,
    loss_landscape,
    rel_error,
    snapshot_svd,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CharacteristicCrossingError",
    "CollocationSet",
    "ErrorReport",
    "Field",
    "JetBatch",
    "LossWeights",
    "LpinnModel",
    "MlpConfig",
    "ParamVector",
    "PdeSpec",
    "PinnModel",
    "Tape",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "backward",
    "burgers_spectral",
    "default_lpinn",
    "default_pinn",
    "embed_periodic",
    "exact_convdiff",
    "exact_convection",
    "fft",
    "hessian_top2",
    "hvp",
    "ifft",
    "init_params",
    "interp_quadratic",
    "loss_landscape",
    "loss_lpinn",
    "loss_pinn",
    "lpinn_forward",
    "make_collocation",
    "mlp_forward",
    "rel_error",
    "residual_eulerian",
    "residual_lagrangian",
    "seed_inputs",
    "snapshot_svd",
    "train",
]
