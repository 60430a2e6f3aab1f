"""Minimal reverse-mode differentiation engine used by the feedback model."""

from . import ops
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .tensor import Tensor, backward, constant, parameter

__all__ = [
    "AdamState",
    "GradCheckReport",
    "Tensor",
    "adam_step",
    "backward",
    "constant",
    "grad_check",
    "load_checkpoint",
    "ops",
    "parameter",
    "save_checkpoint",
]
