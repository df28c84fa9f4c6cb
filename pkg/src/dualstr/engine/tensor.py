"""
Tensor, Parameter and Tape: the reverse-mode core.

A Tape records primitive operations while it is the active tape of the
current context. Each thread starts without a tape, so threads that want
gradients install their own.
"""

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from dualstr.errors import ContractError

logger = logging.getLogger(__name__)

# Working precision for newly created tensors
_dtype: ContextVar[np.dtype] = ContextVar("dualstr_dtype", default=np.dtype(np.float32))

# The tape currently recording, if any
_active_tape: ContextVar[Optional["Tape"]] = ContextVar("dualstr_tape", default=None)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def working_dtype() -> np.dtype:
    return _dtype.get()


@contextmanager
def precision(dtype: "np.typing.DTypeLike") -> Iterator[None]:
    """Switch the storage precision of tensors created inside the block."""
    token = _dtype.set(np.dtype(dtype))
    try:
        yield
    finally:
        _dtype.reset(token)


def current_tape() -> Optional["Tape"]:
    return _active_tape.get()


class Tensor:
    """Dense float array with optional participation in the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf")

    def __init__(
        self,
        data: "np.typing.ArrayLike",
        requires_grad: bool = False,
        name: Optional[str] = None,
        is_leaf: bool = True,
    ):
        self.data: np.ndarray = np.asarray(data, dtype=working_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.is_leaf = is_leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar, dispatched to the primitives in ops
    def __add__(self, other: "Tensor") -> "Tensor":
        from dualstr.engine import ops

        return ops.add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from dualstr.engine import ops

        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from dualstr.engine import ops

        return ops.matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf tensor. `decay` marks it for AdamW weight decay."""

    __slots__ = ("decay",)

    def __init__(
        self,
        data: "np.typing.ArrayLike",
        decay: bool = True,
        name: Optional[str] = None,
    ):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed primitives.

    Usage:
        with Tape() as tape:
            loss = model(...)
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self.records: list[Record] = []
        self._tokens: list = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc: object) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)

    def record(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward: BackwardFn,
    ) -> None:
        self.records.append(Record(op, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Replay records in reverse, accumulating gradients into leaves."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf:
            leaves[id(loss)] = loss

        for record in reversed(self.records):
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            record.output.grad = grad_out
            input_grads = record.backward(grad_out)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            if key in grads:
                tensor.accumulate_grad(grads[key])
        logger.debug(f"Backward replayed {len(self.records)} records")
