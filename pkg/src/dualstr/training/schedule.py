"""Linear warmup followed by cosine decay to zero."""

import logging
import math

from dualstr.config import OptimConfig
from dualstr.errors import ContractError

logger = logging.getLogger(__name__)


class LRSchedule:
    """Learning rate as a function of the step count.

    lr_at(0) is 0, lr_at(warmup_steps) is the peak and lr_at(total_steps) is 0.
    Steps past the end clamp to 0 with a warning.
    """

    def __init__(self, peak: float, total_steps: int, warmup_steps: int):
        if total_steps <= 0:
            raise ContractError(f"total_steps must be positive, got {total_steps}")
        if not 0 < warmup_steps <= total_steps:
            raise ContractError(
                f"warmup_steps must be in 1..{total_steps}, got {warmup_steps}"
            )
        self.peak = peak
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps

    @classmethod
    def from_fraction(
        cls, peak: float, total_steps: int, warmup_fraction: float
    ) -> "LRSchedule":
        warmup = min(total_steps, max(1, round(warmup_fraction * total_steps)))
        return cls(peak, total_steps, warmup)

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ContractError(f"step must be >= 0, got {step}")
        if step > self.total_steps:
            logger.warning(
                f"Step {step} is past the schedule end {self.total_steps}; using lr 0"
            )
            return 0.0
        if step <= self.warmup_steps:
            return self.peak * step / self.warmup_steps
        decay_steps = self.total_steps - self.warmup_steps
        progress = (step - self.warmup_steps) / decay_steps
        return self.peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def group_schedules(config: OptimConfig, total_steps: int) -> dict[str, LRSchedule]:
    """Encoder and from-scratch schedules sharing one warmup and horizon."""
    return {
        "encoder": LRSchedule.from_fraction(
            config.encoder_peak_lr, total_steps, config.warmup_fraction
        ),
        "scratch": LRSchedule.from_fraction(
            config.scratch_peak_lr, total_steps, config.warmup_fraction
        ),
    }
