"""Differentiable tensor operations.

Each function computes its forward value with numpy and, when any input
requires grad, attaches the matching vector-Jacobian product.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .tensor import DimensionError, NumericalError, Tensor, as_tensor, get_precision, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Componentwise product of two same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def backward(g):
        return g * b.data, g * a.data

    return make_result(out, (a, b), backward, "mul")


elementwise_mul = mul


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = a.data * a.data.dtype.type(c)

    def backward(g):
        return (g * g.dtype.type(c),)

    return make_result(out, (a,), backward, "scale")


def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ for shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 dims, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result(out, (a,), backward, "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result(out, (a,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc} (shapes {[t.shape for t in ts]})") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, ts, backward, "concat")


def slice(a, index) -> Tensor:
    """Basic (view) indexing; the backward scatters into a zero buffer."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(np.array(out), (a,), backward, "slice")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DimensionError(f"reduce_sum over an empty tensor of shape {a.shape}")
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), backward, "reduce_sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _check_softmax_input(x: np.ndarray, op: str) -> None:
    if np.isnan(x).any() or np.isposinf(x).any():
        raise NumericalError(f"{op}: input contains NaN or +Inf")


def softmax(a) -> Tensor:
    """Softmax over the last axis. ``-inf`` entries act as masks."""
    a = as_tensor(a)
    _check_softmax_input(a.data, "softmax")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return make_result(out, (a,), backward, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    _check_softmax_input(a.data, "log_softmax")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", under="ignore"):
        lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        p = np.exp(out)
        return (g - p * np.sum(g, axis=-1, keepdims=True),)

    return make_result(out, (a,), backward, "log_softmax")


def embedding_lookup(table, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"embedding ids must be integers, got {ids.dtype}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"token id out of range [0, {n}): min {ids.min()}, max {ids.max()}")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return make_result(out, (table,), backward, "embedding_lookup")


def take_last(a, idx) -> Tensor:
    """``out[..., ] = a[..., idx[...]]``: pick one entry per row of the last axis."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise DimensionError(f"take_last: index shape {idx.shape} must equal {a.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return make_result(out, (a,), backward, "take_last")


def rms_normalize(x, weight, eps: float = 1e-6) -> Tensor:
    """``x / sqrt(mean(x**2, last axis) + eps) * weight`` with no bias or centring."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.shape != x.shape[-1:]:
        raise DimensionError(f"rms_normalize: weight shape {weight.shape} must be ({x.shape[-1]},)")
    d = x.shape[-1]
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    normed = x.data * inv
    out = normed * weight.data

    def backward(g):
        gw = _unbroadcast(g * normed, weight.shape)
        gn = g * weight.data
        gx = inv * (gn - normed * np.sum(gn * normed, axis=-1, keepdims=True) / d)
        return gx.astype(x.dtype, copy=False), gw

    return make_result(out.astype(x.dtype, copy=False), (x, weight), backward, "rms_normalize")


# --- activations -----------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = kernels.sigmoid(a.data)

    def backward(g):
        return (g * out * (1 - out),)

    return make_result(out, (a,), backward, "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype, copy=False)

    def backward(g):
        # subgradient at exactly 0 is 0
        return (g * mask,)

    return make_result(out, (a,), backward, "relu")


def gelu(a) -> Tensor:
    a = as_tensor(a)
    out = kernels.gelu(a.data)

    def backward(g):
        return (g * kernels.gelu_grad(a.data),)

    return make_result(out, (a,), backward, "gelu")


def swish(a, beta: float = 1.0) -> Tensor:
    a = as_tensor(a)
    out = kernels.swish(a.data, beta)

    def backward(g):
        return (g * kernels.swish_grad(a.data, beta),)

    return make_result(out, (a,), backward, "swish")


def identity(a) -> Tensor:
    return as_tensor(a)


# --- losses ----------------------------------------------------------------


def token_nll(logits, targets, pad_id: int = 0) -> tuple[Tensor, int]:
    """Summed negative log-likelihood over non-pad targets, and the token count."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    lp = take_last(log_softmax(logits), targets)
    mask = (targets != pad_id).astype(get_precision())
    total = reduce_sum(mul(lp, Tensor(mask)))
    return scale(total, -1.0), int(mask.sum())


def cross_entropy(logits, targets, pad_id: int = 0) -> Tensor:
    """Mean per-token NLL; pad positions are excluded from loss and count."""
    total, count = token_nll(logits, targets, pad_id)
    if count == 0:
        raise DimensionError("cross_entropy: every target position is padding")
    return scale(total, 1.0 / count)


def dropout(a, rate: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity when ``rate`` is 0 (the pre-training default)."""
    if rate == 0.0:
        return as_tensor(a)
    if not 0.0 < rate < 1.0 or rng is None:
        raise ValueError("dropout needs 0 <= rate < 1 and an rng when active")
    a = as_tensor(a)
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, Tensor(keep))

