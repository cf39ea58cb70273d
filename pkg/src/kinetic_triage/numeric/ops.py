"""Differentiable primitives.

Every op validates shapes, raises NumericError on non-finite output, and
registers a vector-Jacobian closure on the active tape when gradients are
being tracked.
"""

from __future__ import annotations

import math

import numpy as np

from kinetic_triage.errors import NumericError
from kinetic_triage.numeric.tensor import Tensor, record_or_pass

_GELU_C = math.sqrt(2.0 / math.pi)


def _finite(op: str, data: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite output")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise NumericError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(_finite("matmul", np.matmul(a.data, b.data)))

    def make_vjp():
        def vjp(g):
            ga = gb = None
            if a.tracked:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            if b.tracked:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            return ga, gb
        return vjp

    return record_or_pass("matmul", (a, b), out, make_vjp)


def _broadcast_binary(op: str, a: Tensor, b: Tensor, fn, dfa, dfb) -> Tensor:
    try:
        data = fn(a.data, b.data)
    except ValueError:
        raise NumericError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    out = Tensor(_finite(op, data))

    def make_vjp():
        def vjp(g):
            ga = _unbroadcast(dfa(g), a.shape) if a.tracked else None
            gb = _unbroadcast(dfb(g), b.shape) if b.tracked else None
            return ga, gb
        return vjp

    return record_or_pass(op, (a, b), out, make_vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _broadcast_binary("add", a, b, np.add, lambda g: g, lambda g: g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _broadcast_binary("mul", a, b, np.multiply,
                             lambda g: g * b.data, lambda g: g * a.data)


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, axis1, axis2)))

    def make_vjp():
        return lambda g: (np.swapaxes(g, axis1, axis2),)

    return record_or_pass("swapaxes", (x,), out, make_vjp)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two dims."""
    if x.data.ndim < 2:
        raise NumericError(f"transpose: needs >= 2 dims, got shape {x.shape}")
    return swapaxes(x, -1, -2)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise NumericError(f"reshape: cannot view {x.shape} as {shape}") from None
    out = Tensor(data)
    orig = x.shape

    def make_vjp():
        return lambda g: (g.reshape(orig),)

    return record_or_pass("reshape", (x,), out, make_vjp)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along an axis (the slice axis is squeezed out)."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise NumericError(f"take: axis {axis} out of range for shape {x.shape}")
    axis = axis % x.data.ndim
    if not 0 <= index < x.data.shape[axis]:
        raise NumericError(f"take: index {index} out of range for shape {x.shape}")
    selector = (slice(None),) * axis + (index,)
    out = Tensor(np.ascontiguousarray(x.data[selector]))

    def make_vjp():
        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[selector] = g
            return (gx,)
        return vjp

    return record_or_pass("take", (x,), out, make_vjp)


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(_finite("reduce_sum", np.asarray(x.data.sum(dtype=x.dtype))))

    def make_vjp():
        return lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record_or_pass("reduce_sum", (x,), out, make_vjp)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(_finite("softmax", y))

    def make_vjp():
        def vjp(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - dot),)
        return vjp

    return record_or_pass("softmax", (x,), out, make_vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then scale and shift."""
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise NumericError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(_finite("layer_norm", xhat * gain.data + bias.data))

    def make_vjp():
        def vjp(g):
            gx = ggain = gbias = None
            if gain.tracked:
                ggain = (g * xhat).reshape(-1, d).sum(axis=0)
            if bias.tracked:
                gbias = g.reshape(-1, d).sum(axis=0)
            if x.tracked:
                gxhat = g * gain.data
                gx = inv_std * (
                    gxhat
                    - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
                )
            return gx, ggain, gbias
        return vjp

    return record_or_pass("layer_norm", (x, gain, bias), out, make_vjp)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (the variant common BERT stacks ship with)."""
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = Tensor(_finite("gelu", 0.5 * x.data * (1.0 + t)))

    def make_vjp():
        def vjp(g):
            sech2 = 1.0 - t * t
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x.data * sech2 * d_inner),)
        return vjp

    return record_or_pass("gelu", (x,), out, make_vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(_finite("tanh", y))

    def make_vjp():
        return lambda g: (g * (1.0 - y * y),)

    return record_or_pass("tanh", (x,), out, make_vjp)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise NumericError(f"embedding_lookup: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise NumericError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}) in lookup")
    out = Tensor(_finite("embedding_lookup", table.data[ids]))

    def make_vjp():
        def vjp(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            return (gt,)
        return vjp

    return record_or_pass("embedding_lookup", (table,), out, make_vjp)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations scale by 1/(1 - rate).

    rate 0 or training=False is the identity. The mask comes from the caller's
    seeded generator so runs are bit-reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout: rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise NumericError("dropout: a seeded generator is required in training mode")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale
    out = Tensor(_finite("dropout", x.data * mask))

    def make_vjp():
        return lambda g: (g * mask,)

    return record_or_pass("dropout", (x,), out, make_vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true label.

    logits: (B, C) or (C,); labels: (B,) integer array or scalar.
    """
    data = logits.data
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2:
        raise NumericError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer):
        raise NumericError(f"cross_entropy: labels must be integers, got {labels.dtype}")
    b, c = data.shape
    if labels.shape != (b,):
        raise NumericError(
            f"cross_entropy: labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise NumericError(f"cross_entropy: label outside [0, {c})")

    shifted = data - data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(b), labels].mean(dtype=data.dtype)
    out = Tensor(_finite("cross_entropy", np.asarray(loss, dtype=data.dtype)))

    def make_vjp():
        def vjp(g):
            probs = np.exp(log_probs)
            probs[np.arange(b), labels] -= 1.0
            grad = probs * (g / b)
            return (grad.reshape(logits.shape),)
        return vjp

    return record_or_pass("cross_entropy", (logits,), out, make_vjp)
