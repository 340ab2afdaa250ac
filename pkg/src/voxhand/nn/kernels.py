"""Numpy kernels for 3-D convolution, transposed convolution and pooling.

Two convolution paths share one contract:

* ``*_naive`` loop directly over output voxels and kernel taps.  Slow; kept
  as the reference the fast path is tested against.
* ``*_fast`` pad into a channels-last buffer and flatten it.  For stride 1 a
  kernel tap ``(a, b, c)`` is then a constant shift of the flat index, so
  every tap is one contiguous ``(L, C) @ (C, O)`` matmul with no copies.
  Inputs with few channels instead gather taps into chunked im2col blocks.

Weights use ``(out, in, kd, kh, kw)`` for convolution and
``(in, out, kd, kh, kw)`` for transposed convolution.  Activations are NCDHW.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import ShapeMismatch

IM2COL_MAX_K = 64  # use chunked im2col when in_channels * taps <= this
IM2COL_CHUNK = 8192


def triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected an int or 3-tuple, got {v!r}")
    return t


def conv_output_shape(in_size, kernel, stride, padding) -> tuple[int, int, int]:
    return tuple((i + 2 * p - k) // s + 1 for i, k, s, p in zip(in_size, triple(kernel), triple(stride), triple(padding)))


def transpose_output_shape(in_size, kernel, stride) -> tuple[int, int, int]:
    return tuple((i - 1) * s + k for i, k, s in zip(in_size, triple(kernel), triple(stride)))


def _check_conv(x, w, stride, padding):
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv3d expects 5-D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    out = conv_output_shape(x.shape[2:], w.shape[2:], stride, padding)
    if min(out) < 1:
        raise ShapeMismatch(f"conv3d output would be empty: input {x.shape}, kernel {w.shape[2:]}")
    return out


# ------------------------------------------------------------------ naive


def conv3d_forward_naive(x, w, b, stride=1, padding=0):
    stride, padding = triple(stride), triple(padding)
    out_sz = _check_conv(x, w, stride, padding)
    N, C = x.shape[:2]
    O, _, kd, kh, kw = w.shape
    pd, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    y = np.zeros((N, O) + out_sz, dtype=np.result_type(x, w))
    wf = w.reshape(O, -1)
    for n in range(N):
        for i, j, k in itertools.product(*(range(s) for s in out_sz)):
            d0, h0, w0 = i * stride[0], j * stride[1], k * stride[2]
            patch = xp[n, :, d0:d0 + kd, h0:h0 + kh, w0:w0 + kw].reshape(-1)
            y[n, :, i, j, k] = wf @ patch
    if b is not None:
        y += b.reshape(1, O, 1, 1, 1)
    return y


def conv3d_backward_naive(gy, x, w, stride=1, padding=0):
    stride, padding = triple(stride), triple(padding)
    N, C = x.shape[:2]
    O, _, kd, kh, kw = w.shape
    pd, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for n in range(N):
        for i, j, k in itertools.product(*(range(s) for s in gy.shape[2:])):
            d0, h0, w0 = i * stride[0], j * stride[1], k * stride[2]
            g = gy[n, :, i, j, k]
            gw += g[:, None, None, None, None] * xp[n, None, :, d0:d0 + kd, h0:h0 + kh, w0:w0 + kw]
            gxp[n, :, d0:d0 + kd, h0:h0 + kh, w0:w0 + kw] += np.tensordot(g, w, axes=(0, 0))
    D, H, W = x.shape[2:]
    gx = gxp[:, :, pd:pd + D, ph:ph + H, pw:pw + W]
    return gx, gw, gy.sum(axis=(0, 2, 3, 4))


def conv_transpose3d_forward_naive(x, w, b, stride=2):
    stride = triple(stride)
    N, C, D, H, W = x.shape
    _, O, kd, kh, kw = w.shape
    out_sz = transpose_output_shape((D, H, W), (kd, kh, kw), stride)
    y = np.zeros((N, O) + out_sz, dtype=np.result_type(x, w))
    for n, i, j, k in itertools.product(range(N), range(D), range(H), range(W)):
        d0, h0, w0 = i * stride[0], j * stride[1], k * stride[2]
        y[n, :, d0:d0 + kd, h0:h0 + kh, w0:w0 + kw] += np.tensordot(x[n, :, i, j, k], w, axes=(0, 0))
    if b is not None:
        y += b.reshape(1, O, 1, 1, 1)
    return y


# ------------------------------------------------------------------- fast


def _to_padded_cl(x, padding, size=None):
    """NCDHW -> zero-padded N,Dp,Hp,Wp,C (optionally padded further to ``size``)."""
    N, C, D, H, W = x.shape
    pd, ph, pw = padding
    dp, hp, wp = size if size is not None else (D + 2 * pd, H + 2 * ph, W + 2 * pw)
    xp = np.zeros((N, dp, hp, wp, C), dtype=x.dtype)
    xp[:, pd:pd + D, ph:ph + H, pw:pw + W, :] = x.transpose(0, 2, 3, 4, 1)
    return xp


def _shifts(kernel, padded):
    kd, kh, kw = kernel
    _, hp, wp = padded
    return [a * hp * wp + b * wp + c for a in range(kd) for b in range(kh) for c in range(kw)]


def _gather_cols(xf, shifts, start, n, out):
    for t, s in enumerate(shifts):
        out[:n, t] = xf[start + s:start + s + n]


def conv3d_forward_fast(x, w, b, stride=1, padding=0):
    stride, padding = triple(stride), triple(padding)
    out_sz = _check_conv(x, w, stride, padding)
    N, C = x.shape[:2]
    O = w.shape[0]
    kernel = w.shape[2:]
    dtype = np.result_type(x, w)
    xp = _to_padded_cl(x.astype(dtype, copy=False), padding)
    padded = xp.shape[1:4]
    full = tuple(p - k + 1 for p, k in zip(padded, kernel))  # stride-1 output extent
    xf = xp.reshape(-1, C)
    shifts = _shifts(kernel, padded)
    L = xf.shape[0] - shifts[-1]
    yf = np.zeros((xf.shape[0], O), dtype=dtype)
    taps = len(shifts)
    wt = np.ascontiguousarray(w.reshape(O, C, taps).transpose(2, 1, 0), dtype=dtype)  # taps, C, O
    if C * taps <= IM2COL_MAX_K:
        w2 = wt.reshape(taps * C, O)
        col = np.empty((IM2COL_CHUNK, taps, C), dtype=dtype)
        for st in range(0, L, IM2COL_CHUNK):
            n = min(IM2COL_CHUNK, L - st)
            _gather_cols(xf, shifts, st, n, col)
            np.matmul(col[:n].reshape(n, taps * C), w2, out=yf[st:st + n])
    else:
        tmp = np.empty((L, O), dtype=dtype)
        for t, s in enumerate(shifts):
            np.matmul(xf[s:s + L], wt[t], out=tmp)
            yf[:L] += tmp
    y = yf.reshape(N, *padded, O)[:, :full[0]:stride[0], :full[1]:stride[1], :full[2]:stride[2], :]
    assert y.shape[1:4] == out_sz
    y = np.ascontiguousarray(y.transpose(0, 4, 1, 2, 3))
    if b is not None:
        y += b.astype(dtype, copy=False).reshape(1, O, 1, 1, 1)
    return y


def conv3d_backward_fast(gy, x, w, stride=1, padding=0, need_input_grad=True):
    stride, padding = triple(stride), triple(padding)
    N, C, D, H, W = x.shape
    O = w.shape[0]
    kernel = w.shape[2:]
    dtype = gy.dtype
    xp = _to_padded_cl(x.astype(dtype, copy=False), padding)
    padded = xp.shape[1:4]
    full = tuple(p - k + 1 for p, k in zip(padded, kernel))
    xf = xp.reshape(-1, C)
    shifts = _shifts(kernel, padded)
    taps = len(shifts)
    L = xf.shape[0] - shifts[-1]
    # scatter the upstream gradient onto the stride-1 flat index space
    g = np.zeros((N,) + padded + (O,), dtype=dtype)
    g[:, :full[0]:stride[0], :full[1]:stride[1], :full[2]:stride[2], :] = gy.transpose(0, 2, 3, 4, 1)
    gf = g.reshape(-1, O)
    gb = gy.sum(axis=(0, 2, 3, 4))
    wt = np.ascontiguousarray(w.reshape(O, C, taps).transpose(2, 1, 0), dtype=dtype)  # taps, C, O
    gwt = np.zeros((taps, C, O), dtype=dtype)
    if C * taps <= IM2COL_MAX_K:
        col = np.empty((IM2COL_CHUNK, taps, C), dtype=dtype)
        acc = gwt.reshape(taps * C, O)
        for st in range(0, L, IM2COL_CHUNK):
            n = min(IM2COL_CHUNK, L - st)
            _gather_cols(xf, shifts, st, n, col)
            acc += col[:n].reshape(n, taps * C).T @ gf[st:st + n]
    else:
        for t, s in enumerate(shifts):
            np.matmul(xf[s:s + L].T, gf[:L], out=gwt[t])
    gw = gwt.transpose(2, 1, 0).reshape(w.shape)
    gx = None
    if need_input_grad:
        gxf = np.zeros_like(xf)
        tmp = np.empty((L, C), dtype=dtype)
        for t, s in enumerate(shifts):
            np.matmul(gf[:L], wt[t].T, out=tmp)
            gxf[s:s + L] += tmp
        pd, ph, pw = padding
        gxp = gxf.reshape(N, *padded, C)
        gx = np.ascontiguousarray(gxp[:, pd:pd + D, ph:ph + H, pw:pw + W, :].transpose(0, 4, 1, 2, 3))
    return gx, gw, gb


def conv_transpose3d_forward_fast(x, w, b, stride=2):
    stride = triple(stride)
    if x.ndim != 5 or w.ndim != 5 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"conv_transpose3d: input {x.shape} incompatible with weights {w.shape}")
    N, C, D, H, W = x.shape
    _, O, kd, kh, kw = w.shape
    dtype = np.result_type(x, w)
    out_sz = transpose_output_shape((D, H, W), (kd, kh, kw), stride)
    xl = np.ascontiguousarray(x.transpose(0, 2, 3, 4, 1), dtype=dtype).reshape(-1, C)
    y = np.zeros((N,) + out_sz + (O,), dtype=dtype)
    sd, sh, sw = stride
    for a, bb, c in itertools.product(range(kd), range(kh), range(kw)):
        contrib = (xl @ w[:, :, a, bb, c].astype(dtype, copy=False)).reshape(N, D, H, W, O)
        y[:, a:a + (D - 1) * sd + 1:sd, bb:bb + (H - 1) * sh + 1:sh, c:c + (W - 1) * sw + 1:sw, :] += contrib
    y = np.ascontiguousarray(y.transpose(0, 4, 1, 2, 3))
    if b is not None:
        y += b.astype(dtype, copy=False).reshape(1, O, 1, 1, 1)
    return y


def conv_transpose3d_backward_fast(gy, x, w, stride=2):
    stride = triple(stride)
    N, C, D, H, W = x.shape
    _, O, kd, kh, kw = w.shape
    dtype = gy.dtype
    xl = np.ascontiguousarray(x.transpose(0, 2, 3, 4, 1), dtype=dtype).reshape(-1, C)
    gl = gy.transpose(0, 2, 3, 4, 1)
    gx = np.zeros_like(xl)
    gw = np.zeros_like(w, dtype=dtype)
    sd, sh, sw = stride
    for a, bb, c in itertools.product(range(kd), range(kh), range(kw)):
        g = gl[:, a:a + (D - 1) * sd + 1:sd, bb:bb + (H - 1) * sh + 1:sh, c:c + (W - 1) * sw + 1:sw, :].reshape(-1, O)
        wk = w[:, :, a, bb, c].astype(dtype, copy=False)
        gx += g @ wk.T
        gw[:, :, a, bb, c] = xl.T @ g
    gx = np.ascontiguousarray(gx.reshape(N, D, H, W, C).transpose(0, 4, 1, 2, 3))
    return gx, gw, gy.sum(axis=(0, 2, 3, 4))


# ---------------------------------------------------------------- pooling


def maxpool3d_forward(x, kernel=2, stride=2):
    """Returns the pooled array and the flat input index of each window's max.

    Ties go to the first element in (d, h, w) scan order.
    """
    kernel, stride = triple(kernel), triple(stride)
    if x.ndim != 5:
        raise ShapeMismatch(f"maxpool3d expects NCDHW input, got {x.shape}")
    if any(s < k for s, k in zip(x.shape[2:], kernel)):
        raise ShapeMismatch(f"maxpool3d kernel {kernel} larger than input {x.shape[2:]}")
    N, C, D, H, W = x.shape
    out = tuple((s - k) // st + 1 for s, k, st in zip((D, H, W), kernel, stride))
    kd, kh, kw = kernel
    if kernel == stride:
        od, oh, ow = out
        v = x[:, :, :od * kd, :oh * kh, :ow * kw].reshape(N, C, od, kd, oh, kh, ow, kw)
        win = v.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(N, C, od, oh, ow, kd * kh * kw)
    else:
        sv = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=(2, 3, 4))
        sv = sv[:, :, ::stride[0], ::stride[1], ::stride[2]]
        win = sv.reshape(N, C, *out, kd * kh * kw)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    # flat index into x of each argmax
    a, r = np.divmod(arg, kh * kw)
    bb, c = np.divmod(r, kw)
    di = np.arange(out[0]).reshape(-1, 1, 1) * stride[0] + a
    hi = np.arange(out[1]).reshape(1, -1, 1) * stride[1] + bb
    wi = np.arange(out[2]).reshape(1, 1, -1) * stride[2] + c
    base = (np.arange(N).reshape(-1, 1, 1, 1, 1) * C + np.arange(C).reshape(1, -1, 1, 1, 1)) * (D * H * W)
    idx = base + (di * H + hi) * W + wi
    return np.ascontiguousarray(y), idx


def maxpool3d_backward(gy, idx, x_shape, overlapping: bool):
    gx = np.zeros(int(np.prod(x_shape)), dtype=gy.dtype)
    if overlapping:
        np.add.at(gx, idx.ravel(), gy.ravel())
    else:
        gx[idx.ravel()] = gy.ravel()
    return gx.reshape(x_shape)


def adaptive_pool_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """(out, in) averaging matrix; bin i spans [floor(i*in/out), ceil((i+1)*in/out))."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    for i in range(out_size):
        lo = (i * in_size) // out_size
        hi = -((-(i + 1) * in_size) // out_size)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m
