"""Differentiable primitives over :class:`Tensor`.

Each function computes its forward value eagerly and attaches a closure that
maps the upstream gradient to gradients for its inputs.
"""

import numpy as np

from ..exceptions import ShapeError
from .tensor import Tensor, constant


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, backward_fn, op):
    return Tensor(value, parents, backward_fn, op)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = constant(a), constant(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward_fn, "matmul")


def add(a, b):
    a, b = constant(a), constant(b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    if out.shape != a.shape and out.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward_fn, "add")


def scale(x, c):
    x = constant(x)
    c = float(c)
    return _node(x.value * c, (x,), lambda g: (g * c,), "scale")


def sum(x):  # noqa: A001 - mirrors numpy naming
    x = constant(x)
    return _node(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x):
    x = constant(x)
    n = x.value.size
    return _node(x.value.mean(), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def reshape(x, shape):
    x = constant(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = constant(x)
    axes = tuple(range(x.value.ndim))[::-1] if axes is None else tuple(axes)
    inverse = np.argsort(axes)
    return _node(x.value.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def take(x, index):
    """Select ``x[index]`` along the leading axis."""
    x = constant(x)

    def backward_fn(g):
        full = np.zeros_like(x.value)
        # accumulate: an index may repeat
        np.add.at(full, index, g)
        return (full,)

    return _node(x.value[index], (x,), backward_fn, "take")


def concat(tensors, axis=-1):
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), backward_fn, "concat")


def relu(x):
    x = constant(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def dropout(x, p, training, rng=None):
    """Inverted dropout; the identity in eval mode or when ``p == 0``."""
    x = constant(x)
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.value * keep, (x,), lambda g: (g * keep,), "dropout")


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, shape, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(shape)
        self.running_var = np.ones(shape)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state, training):
    """Normalize over the batch (leading) axis, separately for every feature.

    In train mode batch statistics are used and the running statistics
    updated; in eval mode the running statistics are used.
    """
    x, gamma, beta = constant(x), constant(gamma), constant(beta)
    if x.shape[1:] != gamma.shape or gamma.shape != beta.shape:
        raise ShapeError("batch_norm", x.shape, gamma.shape, beta.shape)
    eps = state.eps
    if training:
        mu = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        m = state.momentum
        n = x.shape[0]
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv_std
    out = gamma.value * xhat + beta.value

    def backward_fn(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gxhat = g * gamma.value
        if training:
            gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward_fn, "batch_norm")


def max_pool(x, axis):
    """Maximum over ``axis`` (the axis is removed). Ties route the gradient to the first max."""
    x = constant(x)
    axis = axis % x.value.ndim
    idx = np.expand_dims(np.argmax(x.value, axis=axis), axis)
    out = np.take_along_axis(x.value, idx, axis=axis).squeeze(axis)

    def backward_fn(g):
        full = np.zeros_like(x.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(out, (x,), backward_fn, "max_pool")


def spatial_max_pool(x, joint_axis=1):
    return max_pool(x, joint_axis)


def conv1d(x, w, b):
    """1-D convolution, stride 1, 'same' zero padding.

    ``x`` is ``(B, C_in, L)``, ``w`` is ``(C_out, C_in, k)`` with odd ``k``,
    ``b`` is ``(C_out,)``. Output is ``(B, C_out, L)``.
    """
    x, w, b = constant(x), constant(w), constant(b)
    if (x.value.ndim != 3 or w.value.ndim != 3 or x.shape[1] != w.shape[1]
            or w.shape[2] % 2 == 0 or b.shape != (w.shape[0],)):
        raise ShapeError("conv1d", x.shape, w.shape, b.shape)
    k = w.shape[2]
    pad = k // 2
    length = x.shape[2]
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad)))
    out = b.value[None, :, None] + _sum_taps(w.value, xp, length)

    def backward_fn(g):
        gw = np.empty_like(w.value)
        gxp = np.zeros_like(xp)
        for t in range(k):
            window = xp[:, :, t:t + length]
            gw[:, :, t] = np.einsum("bol,bil->oi", g, window)
            gxp[:, :, t:t + length] += np.einsum("oi,bol->bil", w.value[:, :, t], g)
        return gxp[:, :, pad:pad + length], gw, g.sum(axis=(0, 2))

    return _node(out, (x, w, b), backward_fn, "conv1d")


def _sum_taps(w, xp, length):
    out = 0.0
    for t in range(w.shape[2]):
        out = out + np.einsum("oi,bil->bol", w[:, :, t], xp[:, :, t:t + length])
    return out


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``(B, C)`` logits against integer ``labels``."""
    logits = constant(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.value.ndim == 1:
        logits = reshape(logits, (1, -1))
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(len(labels))
    loss = -log_p[rows, labels].mean()

    def backward_fn(g):
        p = np.exp(log_p)
        p[rows, labels] -= 1.0
        return (p * (float(g) / len(labels)),)

    return _node(loss, (logits,), backward_fn, "softmax_cross_entropy")


def mse(a, b):
    """Mean of squared elementwise differences."""
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    diff = a.value - b.value
    n = diff.size

    def backward_fn(g):
        ga = diff * (2.0 * float(g) / n)
        return ga, -ga

    return _node((diff * diff).mean(), (a, b), backward_fn, "mse")


def soft_dtw(x, target, gamma):
    """soft-DTW between a ``(N, D)`` tensor and a constant ``(M, D)`` target."""
    from ..alignment import SoftDtwConfig, soft_dtw_value_and_grad

    x = constant(x)
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if x.value.ndim != 2 or target.ndim != 2 or x.shape[1] != target.shape[1]:
        raise ShapeError("soft_dtw", x.shape, target.shape)
    value, grad = soft_dtw_value_and_grad(x.value, target, SoftDtwConfig(gamma))
    return _node(value, (x,), lambda g: (grad * float(g),), "soft_dtw")
