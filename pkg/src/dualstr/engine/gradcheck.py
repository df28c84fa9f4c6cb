"""
Finite-difference gradient check.

The analytic pass runs at the working precision; the central differences
are evaluated with the inputs promoted to float64. Errors are relative,
|a - b| / max(|a|, |b|, 1e-8), element by element.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from dualstr.engine.tensor import Tape, Tensor, precision
from dualstr.errors import ContractError

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = DENOMINATOR_FLOOR
) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _scalar(out: Tensor) -> float:
    if out.data.size != 1:
        raise ContractError(
            f"grad_check: function must return a scalar, got shape {out.shape}"
        )
    return float(out.data.reshape(-1)[0])


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    max_checks: Optional[int] = None,
    seed: int = 0,
    scale_floor: float = 0.0,
) -> float:
    """Return the worst relative error between tape and central-difference gradients.

    `max_checks` caps the number of elements checked per input; the checked
    elements are drawn with `seed`. A positive `scale_floor` raises every
    denominator to at least that fraction of the input's largest gradient,
    which hides float32 noise on near-zero entries. It is off by default.
    """
    if step <= 0:
        raise ContractError(f"grad_check: step must be positive, got {step}")
    if scale_floor < 0:
        raise ContractError(f"grad_check: scale_floor must be >= 0, got {scale_floor}")

    saved_flags = [(t.requires_grad, t.grad) for t in inputs]
    originals = [t.data for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for tensor in inputs:
            tensor.requires_grad = True
            tensor.grad = None
        with Tape() as tape:
            out = f(*inputs)
        _scalar(out)
        tape.backward(out)
        analytic = [
            t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
            for t in inputs
        ]

        with precision(np.float64):
            for tensor in inputs:
                tensor.data = tensor.data.astype(np.float64)
            for index, tensor in enumerate(inputs):
                flat = tensor.data.reshape(-1)
                positions = np.arange(flat.size)
                if max_checks is not None and flat.size > max_checks:
                    positions = rng.choice(flat.size, size=max_checks, replace=False)
                numeric = np.empty(len(positions))
                for slot, pos in enumerate(positions):
                    saved = flat[pos]
                    flat[pos] = saved + step
                    plus = _scalar(f(*inputs))
                    flat[pos] = saved - step
                    minus = _scalar(f(*inputs))
                    flat[pos] = saved
                    numeric[slot] = (plus - minus) / (2.0 * step)
                sampled = analytic[index].reshape(-1)[positions].astype(np.float64)
                floor = DENOMINATOR_FLOOR
                if scale_floor:
                    scale = max(
                        float(np.abs(analytic[index]).max(initial=0.0)),
                        float(np.abs(numeric).max(initial=0.0)),
                    )
                    floor = max(floor, scale_floor * scale)
                errors = relative_error(sampled, numeric, floor)
                if errors.size:
                    worst = max(worst, float(errors.max()))
    finally:
        for tensor, original, (flag, grad) in zip(inputs, originals, saved_flags):
            tensor.data = original
            tensor.requires_grad = flag
            tensor.grad = grad
    logger.debug(f"grad_check over {len(inputs)} inputs: worst error {worst:.3e}")
    return worst
