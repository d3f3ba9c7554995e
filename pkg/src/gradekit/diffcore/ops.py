"""Differentiable operators used by the U-Net graders and the GCN."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import as_tensor, make_node


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


def add(a, b):
    a, b = _binary(a, b)
    return make_node(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _binary(a, b)
    return make_node(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _binary(a, b)
    return make_node(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_node(np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),))


def _sigmoid(z):
    # split branches so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),))


def matmul(a, b):
    """``a @ b`` with numpy broadcasting over leading batch dimensions."""
    a, b = _binary(a, b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), bw)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped (out_features, in_features)."""
    x, weight = _binary(x, weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    wt = make_node(weight.data.T, (weight,), lambda g: (g.T,))
    out = matmul(x, wt)
    return out if bias is None else add(out, bias)


def _triple(v):
    return (v, v, v) if np.isscalar(v) else tuple(v)


def conv3d(x, weight, bias=None, stride=1, padding=0):
    """3D cross-correlation on (N, C, D, H, W) input.

    ``weight`` is (C_out, C_in, kd, kh, kw). Stride-1 convolutions run in a
    channel-last layout as one matrix product per kernel offset; strided ones
    fall back to a plain im2col.
    """
    x, weight = _binary(x, weight)
    if x.ndim != 5 or weight.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and weight, got {x.shape}, {weight.shape}")
    n, c, *spatial = x.shape
    cout, cin, *ks = weight.shape
    if cin != c:
        raise ShapeError(f"conv3d: input has {c} channels, weight expects {cin}")
    s = _triple(stride)
    p = _triple(padding)
    padded = [sp + 2 * pp for sp, pp in zip(spatial, p)]
    if any(pd < k for pd, k in zip(padded, ks)):
        raise ShapeError(f"conv3d: padded input {padded} smaller than kernel {ks}")
    if bias is not None:
        bias = as_tensor(bias, dtype=x.dtype)
    if s == (1, 1, 1):
        data, bw = _conv_offsets(x, weight, bias, p)
    else:
        data, bw = _conv_im2col(x, weight, bias, s, p)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(data, parents, bw)


def _conv_offsets(x, weight, bias, p):
    n, c, *spatial = x.shape
    cout, _, *ks = weight.shape
    dt = x.dtype
    xcl = x.data.transpose(0, 2, 3, 4, 1)
    if any(p):
        xcl = np.pad(xcl, ((0, 0),) + tuple((pp, pp) for pp in p) + ((0, 0),))
    xcl = np.ascontiguousarray(xcl)
    osp = tuple(xcl.shape[1 + i] - ks[i] + 1 for i in range(3))
    offsets = [(a, b, cc) for a in range(ks[0]) for b in range(ks[1]) for cc in range(ks[2])]
    kvol = len(offsets)
    # (K, C_in, C_out), kernel offsets in scan order
    wk = np.ascontiguousarray(weight.data.transpose(2, 3, 4, 1, 0).reshape(kvol, c, cout))
    rows = n * osp[0] * osp[1] * osp[2]

    def window(a, b, cc):
        return xcl[:, a:a + osp[0], b:b + osp[1], cc:cc + osp[2], :]

    if c == 1 and kvol > 1:
        # single input channel: im2col is cheap and gives one big product
        cols = np.empty((n, *osp, kvol), dtype=dt)
        for k, off in enumerate(offsets):
            cols[..., k] = window(*off)[..., 0]
        cols = cols.reshape(rows, kvol)
        slices = None
        out = cols @ wk[:, 0, :]
    else:
        cols = None
        slices = [np.ascontiguousarray(window(*off)).reshape(rows, c) for off in offsets]
        out = slices[0] @ wk[0]
        for k in range(1, kvol):
            out += slices[k] @ wk[k]
    if bias is not None:
        out += bias.data
    data = np.ascontiguousarray(out.reshape(n, *osp, cout).transpose(0, 4, 1, 2, 3))

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(rows, cout)
        gw = gx = gb = None
        if weight.requires_grad:
            if cols is not None:
                gwk = (cols.T @ gm)[:, None, :]
            else:
                gwk = np.stack([sl.T @ gm for sl in slices])
            gw = gwk.reshape(*ks, c, cout).transpose(4, 3, 0, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        if x.requires_grad:
            gxcl = np.zeros(xcl.shape, dtype=dt)
            for k, (a, b, cc) in enumerate(offsets):
                gxcl[:, a:a + osp[0], b:b + osp[1], cc:cc + osp[2], :] += (gm @ wk[k].T).reshape(n, *osp, c)
            gxcl = gxcl[:, p[0]:p[0] + spatial[0], p[1]:p[1] + spatial[1], p[2]:p[2] + spatial[2], :]
            gx = np.ascontiguousarray(gxcl.transpose(0, 4, 1, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return data, bw


def _conv_im2col(x, weight, bias, s, p):
    n, c, *spatial = x.shape
    cout, _, *ks = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((pp, pp) for pp in p)) if any(p) else x.data
    win = sliding_window_view(xp, ks, axis=(2, 3, 4))[:, :, ::s[0], ::s[1], ::s[2]]
    osp = win.shape[2:5]
    npos = osp[0] * osp[1] * osp[2]
    kvol = ks[0] * ks[1] * ks[2]
    # (N, D', H', W', C, kd, kh, kw) -> rows are output positions
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * npos, c * kvol)
    wmat = weight.data.reshape(cout, c * kvol)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    data = np.ascontiguousarray(out.reshape(n, *osp, cout).transpose(0, 4, 1, 2, 3))

    def bw(g):
        gm = g.transpose(0, 2, 3, 4, 1).reshape(n * npos, cout)
        gw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, *osp, c, *ks)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for a in range(ks[0]):
                for b in range(ks[1]):
                    for cc in range(ks[2]):
                        gxp[:, :,
                            a:a + s[0] * osp[0]:s[0],
                            b:b + s[1] * osp[1]:s[1],
                            cc:cc + s[2] * osp[2]:s[2]] += gcols[..., a, b, cc].transpose(0, 4, 1, 2, 3)
            gx = gxp[:, :, p[0]:p[0] + spatial[0], p[1]:p[1] + spatial[1], p[2]:p[2] + spatial[2]]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return data, bw


def maxpool3d_2x(x):
    """2x2x2 max pooling, stride 2. Ties go to the first voxel in scan order."""
    x = as_tensor(x)
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d_2x needs even spatial dims, got {x.shape[2:]}")
    blocks = (x.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
              .transpose(0, 1, 2, 4, 6, 3, 5, 7)
              .reshape(n, c, d // 2, h // 2, w // 2, 8))
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = (gb.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
              .transpose(0, 1, 2, 5, 3, 6, 4, 7)
              .reshape(x.shape))
        return (gx,)

    return make_node(out, (x,), bw)


def upsample_nearest3d(x, scale=2):
    x = as_tensor(x)
    n, c, d, h, w = x.shape
    out = x.data.repeat(scale, axis=2).repeat(scale, axis=3).repeat(scale, axis=4)

    def bw(g):
        return (g.reshape(n, c, d, scale, h, scale, w, scale).sum(axis=(3, 5, 7)),)

    return make_node(out, (x,), bw)
