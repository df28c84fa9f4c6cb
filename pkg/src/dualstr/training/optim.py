"""
AdamW with decoupled weight decay over named parameter groups.

Every group has its own learning rate per step. Parameters whose `decay`
flag is False (norms, biases, position queries) skip weight decay.
"""

import logging
from typing import Mapping, Sequence

import numpy as np

from dualstr.engine import Parameter
from dualstr.errors import ContractError, IncompatibleCheckpointError, NonFiniteGradientError

logger = logging.getLogger(__name__)

NamedParameters = Sequence[tuple[str, Parameter]]


class AdamW:
    def __init__(
        self,
        groups: Mapping[str, NamedParameters],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.2,
    ):
        self.groups = {name: list(params) for name, params in groups.items()}
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for params in self.groups.values():
            for name, p in params:
                if not p.requires_grad:
                    raise ContractError(f"frozen parameter '{name}' cannot join an optimizer group")
                if name in self.m:
                    raise ContractError(f"parameter '{name}' appears in two groups")
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [item for params in self.groups.values() for item in params]

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def _check_finite(self) -> None:
        for name, p in self.named_parameters():
            if p.grad is not None and not np.isfinite(p.grad).all():
                logger.error(f"Rejecting optimizer step: non-finite gradient in '{name}'")
                raise NonFiniteGradientError(name)

    def step(self, lrs: Mapping[str, float]) -> None:
        """One update; `lrs` maps every group name to its learning rate."""
        missing = set(self.groups) - set(lrs)
        if missing:
            raise ContractError(f"no learning rate for groups {sorted(missing)}")
        self._check_finite()
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for group, params in self.groups.items():
            lr = lrs[group]
            for name, p in params:
                if p.grad is None:
                    continue
                g = p.grad.astype(p.data.dtype)
                if p.decay and self.weight_decay:
                    p.data = p.data - lr * self.weight_decay * p.data
                m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
                v = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
                self.m[name] = m.astype(p.data.dtype)
                self.v[name] = v.astype(p.data.dtype)
                update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
                p.data = (p.data - lr * update).astype(p.data.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        state = {f"optim.m.{name}": m for name, m in self.m.items()}
        state.update({f"optim.v.{name}": v for name, v in self.v.items()})
        return state

    def load_state(self, tensors: Mapping[str, np.ndarray], step_count: int) -> None:
        for prefix, store in (("optim.m.", self.m), ("optim.v.", self.v)):
            for name, current in store.items():
                key = prefix + name
                if key not in tensors:
                    raise IncompatibleCheckpointError(f"checkpoint lacks optimizer tensor '{key}'")
                value = np.asarray(tensors[key])
                if value.shape != current.shape:
                    raise IncompatibleCheckpointError(
                        f"optimizer tensor '{key}' has shape {value.shape}, expected {current.shape}"
                    )
                store[name] = value.astype(current.dtype).copy()
        self.step_count = step_count
