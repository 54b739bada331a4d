"""Fused differentiable primitives that would be slow as compositions."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, Tensor, _make, as_tensor


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an (N, C, H, W) batch with (Cout, C, k, k) kernels.

    Zero padding of ``pad`` pixels on every side; output size
    ``(in + 2*pad - k) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} pad={pad}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernels, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if cin != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {cin} ({x.shape} vs {weight.shape})")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: spatial extent {(h, w)} (pad {pad}) smaller than kernel {(kh, kw)}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) -> rows of length C*kh*kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, backward)


def sparse_matmul(matrix: sp.spmatrix, x) -> Tensor:
    """Constant sparse (M, N) matrix times a tensor whose leading extent is N."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: matrix {matrix.shape} vs input {x.shape}")
    flat = x.data.reshape(x.shape[0], -1)
    out = np.asarray(matrix @ flat).reshape((matrix.shape[0],) + x.shape[1:])
    mt = matrix.T.tocsr()

    def backward(g):
        return (np.asarray(mt @ g.reshape(g.shape[0], -1)).reshape(x.shape),)

    return _make(out, (x,), backward)


def bilinear_sample(featmap, coords) -> Tensor:
    """Sample an (H, W, C) grid at continuous (x, y) grid coordinates.

    Integer coordinates hit grid values exactly; coordinates outside
    ``[0, W-1] x [0, H-1]`` are clamped to the border. Differentiable with
    respect to the feature map and, inside the grid, to the coordinates.
    """
    featmap = as_tensor(featmap)
    coords = as_tensor(coords)
    if featmap.ndim != 3 or coords.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample: featmap {featmap.shape}, coords {coords.shape}")
    h, w, c = featmap.shape
    lead = coords.shape[:-1]
    xy = coords.data.reshape(-1, 2)
    x = np.clip(xy[:, 0], 0.0, w - 1)
    y = np.clip(xy[:, 1], 0.0, h - 1)
    inside_x = (xy[:, 0] >= 0) & (xy[:, 0] <= w - 1)
    inside_y = (xy[:, 1] >= 0) & (xy[:, 1] <= h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = x - x0
    ty = y - y0
    fm = featmap.data.reshape(h * w, c)
    i00, i01, i10, i11 = y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1
    f00, f01, f10, f11 = fm[i00], fm[i01], fm[i10], fm[i11]
    w00 = (1 - tx) * (1 - ty)
    w01 = tx * (1 - ty)
    w10 = (1 - tx) * ty
    w11 = tx * ty
    out = w00[:, None] * f00 + w01[:, None] * f01 + w10[:, None] * f10 + w11[:, None] * f11
    n = xy.shape[0]

    def backward(g):
        g = g.reshape(n, c)
        gf = gc = None
        if featmap.requires_grad:
            rows = np.concatenate([i00, i01, i10, i11])
            cols = np.tile(np.arange(n), 4)
            vals = np.concatenate([w00, w01, w10, w11])
            scat = sp.csr_matrix((vals, (rows, cols)), shape=(h * w, n))
            gf = np.asarray(scat @ g).reshape(h, w, c)
        if coords.requires_grad:
            dfx = (1 - ty)[:, None] * (f01 - f00) + ty[:, None] * (f11 - f10)
            dfy = (1 - tx)[:, None] * (f10 - f00) + tx[:, None] * (f11 - f01)
            gx = (g * dfx).sum(axis=1) * inside_x * (w > 1)
            gy = (g * dfy).sum(axis=1) * inside_y * (h > 1)
            gc = np.stack([gx, gy], axis=1).reshape(coords.shape)
        return gf, gc

    return _make(out.reshape(lead + (c,)).astype(DTYPE, copy=False), (featmap, coords), backward)
