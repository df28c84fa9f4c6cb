"""Minimal reverse-mode tensor engine."""

from dualstr.engine.gradcheck import grad_check, relative_error
from dualstr.engine.module import Module
from dualstr.engine.streams import DropoutStream
from dualstr.engine.tensor import (
    Parameter,
    Tape,
    Tensor,
    current_tape,
    precision,
    working_dtype,
)

__all__ = [
    "DropoutStream",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "current_tape",
    "grad_check",
    "precision",
    "relative_error",
    "working_dtype",
]
