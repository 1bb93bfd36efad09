"""Fused differentiable operations built on the Tensor primitives."""

from typing import Optional

import numpy as np

from core.tensor import (
    ArrayLike,
    Tensor,
    add,
    as_tensor,
    matmul,
    mul,
    neg,
    scale,
    swapaxes,
)
from utils.errors import ContractError, DegenerateLossError, DimensionError, NumericalError

GELU_C = 0.7978845608  # sqrt(2 / pi)
GELU_A = 0.044715
RMS_EPS = 1e-5
MASK_VALUE = -1e9


def check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values produced by {where}")


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    u = GELU_C * (x.data + GELU_A * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g: np.ndarray):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return Tensor._make(out, (x,), backward, "gelu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def rmsnorm(x: Tensor, gain: Optional[Tensor] = None, eps: float = RMS_EPS) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("rmsnorm needs a trailing feature axis of extent >= 1")
    if gain is not None and gain.shape != (x.shape[-1],):
        raise DimensionError(f"rmsnorm gain shape {gain.shape} does not match features {x.shape[-1]}")
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * r
    gain_data = gain.data if gain is not None else np.float32(1.0)
    out = xhat * gain_data

    def backward(g: np.ndarray):
        gh = g * gain_data
        dx = r * (gh - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gain is None:
            return (dx,)
        return dx, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)

    parents = (x,) if gain is None else (x, gain)
    return Tensor._make(out.astype(x.data.dtype), parents, backward, "rmsnorm")


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Masked mean of per-row cross-entropy; targets of masked-out rows are ignored."""
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab).astype(np.float64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if mask is None:
        mask = np.ones(targets.shape[0], dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if flat.shape[0] != targets.shape[0] or mask.shape[0] != targets.shape[0]:
        raise DimensionError(f"logits rows {flat.shape[0]}, targets {targets.shape[0]} and mask {mask.shape[0]} differ")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("loss mask entries must be 0 or 1")
    denom = mask.sum()
    if denom == 0.0:
        raise DegenerateLossError("cross-entropy requested over an all-zero mask")
    active = mask > 0
    if np.any((targets[active] < 0) | (targets[active] >= vocab)):
        raise ContractError(f"masked-in targets must lie in [0, {vocab})")
    safe_targets = np.where(active, targets, 0)
    rows = np.arange(flat.shape[0])

    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    ce = lse - flat[rows, safe_targets]
    loss = float((mask * ce).sum() / denom)
    check_finite(np.asarray(loss), "softmax_cross_entropy")

    def backward(g: np.ndarray):
        probs = e / z
        probs[rows, safe_targets] -= 1.0
        grad = probs * (mask / denom)[:, None] * float(g)
        return (grad.reshape(logits.shape).astype(logits.data.dtype),)

    return Tensor._make(np.array(loss, dtype=logits.data.dtype), (logits,), backward, "cross_entropy")


def mse_loss(pred: Tensor, target: ArrayLike) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    loss = np.array((diff.astype(np.float64) ** 2).mean(), dtype=pred.data.dtype)
    check_finite(loss, "mse_loss")
    n = diff.size

    def backward(g: np.ndarray):
        grad = (2.0 / n) * diff * g
        return grad, -grad

    return Tensor._make(loss, (pred, target), backward, "mse")


def round_ste(x: Tensor) -> Tensor:
    """Round to the nearest integer; gradients pass straight through."""
    return Tensor._make(np.round(x.data), (x,), lambda g: (g,), "fsq_round")


def causal_mask(n: int) -> np.ndarray:
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    return np.where(upper, np.float32(MASK_VALUE), np.float32(0.0))


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """Scaled dot-product attention over (..., n, d_head) operands."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention operands disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(q.shape[-1]))
    if causal:
        scores = add(scores, Tensor(causal_mask(q.shape[-2])))
    return matmul(softmax(scores, axis=-1), v)


def apply_elementwise(x: Tensor, f: str, other: Optional[ArrayLike] = None, factor: float = 1.0) -> Tensor:
    """Dispatch a named pointwise operation."""
    if f in ("add", "mul"):
        if other is None:
            raise ContractError(f"elementwise {f} needs a second operand")
        return add(x, other) if f == "add" else mul(x, other)
    unary = {
        "gelu": gelu,
        "tanh": tanh,
        "neg": neg,
        "scale": lambda t: scale(t, factor),
    }
    if f not in unary:
        raise ContractError(f"unknown elementwise op {f!r}")
    return unary[f](x)


