"""Minimal differentiable-network kit: tanh MLPs with exact reverse-mode
gradients, parameter (de)serialization, Adam, and a finite-difference
gradient checker."""

from .io import (
    CheckpointError,
    ManifestError,
    PayloadLengthError,
    UnrecognizedFormatError,
    load_params,
    save_params,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .mlp import MLPSpec, ParamVector, grad_check, init_params, mlp_forward, mlp_vjp
from .optim import Adam

__all__ = [
    "Adam",
    "CheckpointError",
    "KERNEL_BACKEND",
    "MLPSpec",
    "ManifestError",
    "ParamVector",
    "PayloadLengthError",
    "UnrecognizedFormatError",
    "grad_check",
    "init_params",
    "load_params",
    "mlp_forward",
    "mlp_vjp",
    "save_params",
]
