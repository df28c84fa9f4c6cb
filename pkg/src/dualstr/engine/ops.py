"""
Differentiable primitives.

Every primitive acts on the trailing one or two axes; leading axes are
batch axes. Binary operands broadcast by numpy suffix rules, and their
gradients are summed back to the operand shape.
"""

from typing import Optional, Sequence, Union

import numpy as np

from dualstr.engine.tensor import BackwardFn, Tensor, current_tape, working_dtype
from dualstr.errors import (
    ContractError,
    DegenerateRowError,
    EmptyLossError,
    LabelError,
    ShapeError,
)

MaskLike = Union[np.ndarray, Tensor, None]

GELU_C = float(np.sqrt(2.0 / np.pi))


def _result(
    op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn
) -> Tensor:
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, is_leaf=False)
    if needs_grad:
        assert tape is not None
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * factor,)

    return _result("scale", x.data * factor, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[..., m, k] @ [..., k, n] -> [..., m, n]"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result("matmul", np.matmul(a.data, b.data), (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight + bias, with weight laid out [in, out]."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * y * (1.0 - y),)

    return _result("sigmoid", y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * positive,)

    return _result("relu", np.where(positive, x.data, 0.0), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        d_inner = GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return _result("gelu", 0.5 * v * (1.0 + t), (x,), backward)


def _mask_array(mask: MaskLike) -> Optional[np.ndarray]:
    if mask is None:
        return None
    return mask.data if isinstance(mask, Tensor) else np.asarray(mask)


def softmax_masked(logits: Tensor, mask: MaskLike = None) -> Tensor:
    """Row softmax over the last axis with an additive {0, -inf} mask.

    The mask is a constant and broadcasts over leading axes.
    """
    z = logits.data.astype(np.float64)
    mask_data = _mask_array(mask)
    if mask_data is not None:
        try:
            z = z + mask_data
        except ValueError:
            raise ShapeError(
                f"softmax_masked: mask {mask_data.shape} does not fit logits {logits.shape}"
            )
    if np.isneginf(z).all(axis=-1).any():
        raise DegenerateRowError(
            "softmax_masked: a row has every entry masked; the attention mask is invalid"
        )
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y64 = e / e.sum(axis=-1, keepdims=True)
    y = y64.astype(working_dtype())

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        g64 = g.astype(np.float64)
        dot = (g64 * y64).sum(axis=-1, keepdims=True)
        return (y64 * (g64 - dot),)

    return _result("softmax_masked", y, (logits,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    v = x.data.astype(np.float64)
    mean = v.mean(axis=-1, keepdims=True)
    centered = v - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g64 = g.astype(np.float64)
        dxhat = g64 * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        dgamma = (g64 * xhat).sum(axis=reduce_axes)
        dbeta = g64.sum(axis=reduce_axes)
        return dx, dgamma, dbeta

    return _result("layer_norm", out, (x, gamma, beta), backward)


def cross_entropy_ignored(
    logits: Tensor, targets: np.ndarray, ignore_id: int
) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_id."""
    num_classes = logits.shape[-1]
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"cross_entropy_ignored: targets {targets.shape} do not match logits {logits.shape}"
        )
    flat_logits = logits.data.reshape(-1, num_classes).astype(np.float64)
    flat_targets = targets.reshape(-1)
    valid = flat_targets != ignore_id
    count = int(valid.sum())
    if count == 0:
        raise EmptyLossError("cross_entropy_ignored: every target position is ignored")
    kept = flat_targets[valid]
    if kept.min() < 0 or kept.max() >= num_classes:
        bad = int(kept[(kept < 0) | (kept >= num_classes)][0])
        raise LabelError(
            f"cross_entropy_ignored: target id {bad} outside [0, {num_classes})"
        )

    rows = flat_logits[valid]
    shifted = rows - rows.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(count), kept]
    loss = (log_z - picked).mean()

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(count), kept] -= 1.0
        grad = np.zeros_like(flat_logits)
        grad[valid] = probs * (float(g) / count)
        return (grad.reshape(logits.shape),)

    return _result("cross_entropy_ignored", np.asarray(loss), (logits,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)][0])
        raise LabelError(f"embedding_lookup: id {bad} outside vocabulary of {vocab}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result("embedding_lookup", table.data[ids], (table,), backward)


def dropout(
    x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]
) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: a generator is required in training mode")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * keep,)

    return _result("dropout", x.data * keep, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    shapes = [t.shape for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {shapes} cannot be joined on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, splits, axis=axis))

    return _result("concat", data, tuple(tensors), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack the rows of `a` followed by the rows of `b`."""
    return concat([a, b], axis=-2)


def expand(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (_unbroadcast(g, x.shape),)

    return _result("expand", np.array(data), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return _result("reshape", x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(x.data, axes), (x,), backward)


def swap_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def getitem(x: Tensor, key: object) -> Tensor:
    """Basic slicing (no fancy indexing)."""
    data = x.data[key]  # type: ignore[index]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        grad[key] = g  # type: ignore[index]
        return (grad,)

    return _result("getitem", np.array(data), (x,), backward)


def stop_gradient(x: Tensor) -> Tensor:
    """Same values, detached from the tape."""
    return Tensor(x.data.copy(), requires_grad=False)


def sum_all(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum_all", np.asarray(x.data.sum()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _result("mean_all", np.asarray(x.data.mean()), (x,), backward)
