"""Differentiable operations on :class:`Tensor`."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateBatch, ShapeMismatch
from . import kernels
from .tensor import Tensor, as_tensor, record


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(x.data * x.data.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),))


def reshape(x: Tensor, shape) -> Tensor:
    in_shape = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(in_shape),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, x.data.dtype.type(0)), (x,), lambda g: (g * mask,))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1 - rate); identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    keep = rng.random(x.shape) >= rate
    factor = (keep / (1.0 - rate)).astype(x.dtype)
    return record(x.data * factor, (x,), lambda g: (g * factor,))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weights {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def backward(g):
        return g @ w.data, g.T @ x.data, (g.sum(axis=0) if b is not None else None)

    parents = (x, w) + ((b,) if b is not None else ())
    return record(y, parents, backward)


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, naive: bool = False) -> Tensor:
    fwd = kernels.conv3d_forward_naive if naive else kernels.conv3d_forward_fast
    y = fwd(x.data, w.data, None if b is None else b.data, stride, padding)

    def backward(g):
        if naive:
            gx, gw, gb = kernels.conv3d_backward_naive(g, x.data, w.data, stride, padding)
        else:
            gx, gw, gb = kernels.conv3d_backward_fast(g, x.data, w.data, stride, padding,
                                                      need_input_grad=x.requires_grad)
        return gx, gw, gb

    parents = (x, w) + ((b,) if b is not None else ())
    return record(y, parents, backward)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=2) -> Tensor:
    y = kernels.conv_transpose3d_forward_fast(x.data, w.data, None if b is None else b.data, stride)

    def backward(g):
        return kernels.conv_transpose3d_backward_fast(g, x.data, w.data, stride)

    parents = (x, w) + ((b,) if b is not None else ())
    return record(y, parents, backward)


def max_pool3d(x: Tensor, kernel=2, stride=2) -> Tensor:
    kernel, stride = kernels.triple(kernel), kernels.triple(stride)
    y, idx = kernels.maxpool3d_forward(x.data, kernel, stride)
    overlapping = any(s < k for s, k in zip(stride, kernel))
    shape = x.shape
    return record(y, (x,), lambda g: (kernels.maxpool3d_backward(g, idx, shape, overlapping),))


def adaptive_avg_pool3d(x: Tensor, size) -> Tensor:
    size = kernels.triple(size)
    mats = [kernels.adaptive_pool_matrix(i, o, x.dtype) for i, o in zip(x.shape[2:], size)]
    md, mh, mw = mats
    y = np.einsum("ncdhw,id,jh,kw->ncijk", x.data, md, mh, mw, optimize=True)
    return record(y, (x,), lambda g: (np.einsum("ncijk,id,jh,kw->ncdhw", g, md, mh, mw, optimize=True),))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch(f"batch_norm: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    dt = x.dtype.type
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatch("batch_norm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    invstd = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (x.data - mean.reshape(bshape)) * invstd.reshape(bshape)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = x.data.size // x.shape[1]

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (invstd.reshape(bshape) / m) * (
                m * gxhat - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = gxhat * invstd.reshape(bshape)
        return gx, ggamma, gbeta

    return record(y, (x, gamma, beta), backward)


def mse_joint_loss(pred: Tensor, truth) -> Tensor:
    """Mean over joints of the squared Euclidean error, averaged over the batch.

    ``pred`` is (B, F*3) or (B, F, 3); ``truth`` has the same number of elements.
    """
    truth = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=pred.dtype)
    if pred.shape[0] != truth.shape[0] or pred.data.size != truth.size or pred.data.size % 3:
        raise ShapeMismatch(f"mse_joint_loss: prediction {pred.shape} vs truth {truth.shape}")
    diff = pred.data - truth.reshape(pred.shape)
    n = pred.data.size // 3  # batch * joints
    loss = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return record(loss, (pred,), lambda g: (diff * (g * 2.0 / n),))
