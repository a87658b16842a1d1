"""Tensor primitives for the 3D fully-convolutional network.

All tensors are numpy arrays shaped (channels, X, Y, Z). Convolutions are
valid (no padding), unit stride, cross-correlation convention. Each forward
function returns the output plus whatever cache its backward needs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(Exception):
    """Raised when tensor shapes are inconsistent with the layer stack."""


def _im2col(x, k):
    """Unfold (C, X, Y, Z) into (P, C*k^3) patch rows, P = prod(out dims)."""
    win = sliding_window_view(x, (k, k, k), axis=(1, 2, 3))
    ci = x.shape[0]
    out_sp = win.shape[1:4]
    # (C, ox, oy, oz, k, k, k) -> (ox, oy, oz, C, k, k, k) -> (P, C*k^3)
    cols = np.ascontiguousarray(win.transpose(1, 2, 3, 0, 4, 5, 6))
    return cols.reshape(-1, ci * k * k * k), out_sp


def conv3d_valid(x, kernels, biases, want_cache=False):
    """Valid cross-correlation of x (Ci,X,Y,Z) with kernels (Co,Ci,k,k,k)."""
    co, ci, k = kernels.shape[0], kernels.shape[1], kernels.shape[2]
    if x.shape[0] != ci:
        raise ShapeError(
            "input has %d channels, kernels expect %d" % (x.shape[0], ci)
        )
    if any(s < k for s in x.shape[1:]):
        raise ShapeError("spatial dims %s smaller than kernel %d" % (x.shape[1:], k))
    if k == 1:
        w = kernels.reshape(co, ci)
        y = np.tensordot(w, x, axes=(1, 0)) + biases[:, None, None, None]
        cache = (x, None, x.shape[1:]) if want_cache else None
    else:
        cols, out_sp = _im2col(x, k)
        w = kernels.reshape(co, -1)
        y = (cols @ w.T).reshape(out_sp + (co,)).transpose(3, 0, 1, 2)
        y = y + biases[:, None, None, None]
        cache = (x, cols, out_sp) if want_cache else None
    if want_cache:
        return y, cache
    return y


def conv3d_backward(dy, kernels, cache):
    """Gradients of conv3d_valid: returns (dx, dkernels, dbiases)."""
    x, cols, out_sp = cache
    co, ci, k = kernels.shape[0], kernels.shape[1], kernels.shape[2]
    db = dy.sum(axis=(1, 2, 3))
    if k == 1:
        dw = np.tensordot(dy, x, axes=((1, 2, 3), (1, 2, 3)))
        dk = dw.reshape(kernels.shape)
        dx = np.tensordot(kernels.reshape(co, ci).T, dy, axes=(1, 0))
        return dx, dk, db
    dy_mat = dy.reshape(co, -1)  # (Co, P) with P in x-major out order
    # cols is (P, Ci*k^3) in the same out ordering
    dk = (dy_mat @ cols).reshape(kernels.shape)
    # dx: full correlation of dy with spatially-flipped, transposed kernels
    pad = k - 1
    dyp = np.zeros(
        (co, dy.shape[1] + 2 * pad, dy.shape[2] + 2 * pad, dy.shape[3] + 2 * pad),
        dtype=dy.dtype,
    )
    dyp[:, pad:-pad, pad:-pad, pad:-pad] = dy
    kt = kernels[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
    dx = conv3d_valid(dyp, np.ascontiguousarray(kt), np.zeros(ci, dtype=dy.dtype))
    return dx, dk, db


def prelu(x, slopes):
    """Channel-wise PReLU: x for x >= 0, slope_c * x otherwise."""
    a = np.asarray(slopes).reshape(-1, 1, 1, 1)
    return np.where(x >= 0, x, a * x)


def prelu_backward(dy, x, slopes):
    """Gradients of prelu: returns (dx, dslopes)."""
    a = np.asarray(slopes).reshape(-1, 1, 1, 1)
    neg = x < 0
    dx = np.where(neg, a * dy, dy)
    da = np.where(neg, dy * x, 0.0).sum(axis=(1, 2, 3))
    return dx, da


def mean_pool2(x):
    """2x2x2 mean pooling over the spatial axes (channels preserved)."""
    c, nx, ny, nz = x.shape
    mx, my, mz = nx // 2, ny // 2, nz // 2
    d = x[:, : 2 * mx, : 2 * my, : 2 * mz]
    return d.reshape(c, mx, 2, my, 2, mz, 2).mean(axis=(2, 4, 6))


def mean_pool2_backward(dy, in_shape):
    """Distribute pooled gradients uniformly over each 2x2x2 block."""
    c, nx, ny, nz = in_shape
    dx = np.zeros(in_shape, dtype=dy.dtype)
    g = dy / 8.0
    up = g.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)
    dx[:, : up.shape[1], : up.shape[2], : up.shape[3]] = up
    return dx


def upsample2_crop(x, target_sp):
    """Nearest-neighbor x2 up-sampling then center crop to target_sp."""
    up = x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)
    off = tuple((up.shape[i + 1] - target_sp[i]) // 2 for i in range(3))
    return up[
        :,
        off[0] : off[0] + target_sp[0],
        off[1] : off[1] + target_sp[1],
        off[2] : off[2] + target_sp[2],
    ]


def upsample2_crop_backward(dy, in_sp):
    """Accumulate cropped-upsample gradients back onto the source grid."""
    c = dy.shape[0]
    full = tuple(2 * s for s in in_sp)
    off = tuple((full[i] - dy.shape[i + 1]) // 2 for i in range(3))
    buf = np.zeros((c,) + full, dtype=dy.dtype)
    buf[
        :,
        off[0] : off[0] + dy.shape[1],
        off[1] : off[1] + dy.shape[2],
        off[2] : off[2] + dy.shape[3],
    ] = dy
    return buf.reshape(c, in_sp[0], 2, in_sp[1], 2, in_sp[2], 2).sum(axis=(2, 4, 6))


def softmax_channels(scores):
    """Numerically stable softmax over the channel axis, computed in f64."""
    s = scores.astype(np.float64)
    s = s - s.max(axis=0, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=0, keepdims=True)
