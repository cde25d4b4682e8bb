"""Differentiable operations on tensors.

Convolution follows the cross-correlation convention with zero padding and is
evaluated as one GEMM per call (windows gathered with ``sliding_window_view``,
contracted with ``tensordot``), which keeps the training loop BLAS-bound.
Inputs may carry a leading batch axis; single-sample calls are wrapped and
unwrapped transparently.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import AggregationError, ShapeError
from .tensor import Tensor, make_op


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def conv2d(
    x,
    weight,
    bias=None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2-D cross-correlation of ``x`` (C,H,W or N,C,H,W) with ``weight`` (Co,Ci,kh,kw).

    Output spatial dims are ``floor((H + 2*ph - kh)/sh) + 1`` and likewise for W.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    bias = _as_tensor(bias) if bias is not None else None
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects C,H,W or N,C,H,W input and 4-D kernels, "
                         f"got {x.shape} and {weight.shape}")
    n, ci, h, w = xd.shape
    co, ci_k, kh, kw = weight.data.shape
    sh, sw = stride
    ph, pw = padding
    if ci != ci_k:
        raise ShapeError(f"conv2d channel mismatch: input has {ci}, kernel expects {ci_k}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(f"conv2d kernel ({kh}x{kw}) larger than padded input "
                         f"({h + 2 * ph}x{w + 2 * pw})")
    if bias is not None and bias.data.shape != (co,):
        raise ShapeError(f"conv2d bias must have shape ({co},), got {bias.shape}")

    if ph or pw:
        xp = np.zeros((n, ci, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        xp[:, :, ph:ph + h, pw:pw + w] = xd
    else:
        xp = xd
    # im2col: one GEMM per call keeps the hot path BLAS-bound
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    h_out, w_out = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, ci * kh * kw)
    w2d = weight.data.reshape(co, ci * kh * kw)
    out2 = cols @ w2d.T
    if bias is not None:
        out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, h_out, w_out, co).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = make_op(out[0] if squeeze else out, parents)
    if res.requires_grad:

        def bw():
            dy = res.grad[None] if squeeze else res.grad
            dy2 = dy.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, co)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(dy2.sum(axis=0))
            if weight.requires_grad:
                weight.accumulate_grad((dy2.T @ cols).reshape(co, ci, kh, kw))
            if x.requires_grad:
                dx = _conv2d_input_grad(dy, dy2, weight.data, (n, ci, h, w),
                                        stride, padding)
                x.accumulate_grad(dx[0] if squeeze else dx)

        res._backward = bw
    return res


def _conv2d_input_grad(dy, dy2, weight, x_shape, stride, padding):
    n, ci, h, w = x_shape
    co, _, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    h_out, w_out = dy.shape[2], dy.shape[3]
    if sh == 1 and sw == 1 and kh - 1 - ph >= 0 and kw - 1 - pw >= 0:
        # stride 1: input gradient is a full correlation with the flipped,
        # transposed kernel -- a second GEMM instead of a scatter loop
        qh, qw = kh - 1 - ph, kw - 1 - pw
        dyp = np.zeros((n, co, h_out + 2 * qh, w_out + 2 * qw), dtype=np.float64)
        dyp[:, :, qh:qh + h_out, qw:qw + w_out] = dy
        win = sliding_window_view(dyp, (kh, kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, co * kh * kw)
        k2 = np.ascontiguousarray(
            weight.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]).reshape(ci, co * kh * kw)
        dx2 = cols @ k2.T
        return np.ascontiguousarray(
            dx2.reshape(n, h, w, ci).transpose(0, 3, 1, 2))
    t = (dy2 @ weight.reshape(co, ci * kh * kw)).reshape(n, h_out, w_out, ci, kh, kw)
    dxp = np.zeros((n, ci, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * h_out:sh, j:j + sw * w_out:sw] += \
                t[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else dxp


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``W @ x + b`` for 1-D ``x``; rows of a 2-D ``x`` map batchwise."""
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    bias = _as_tensor(bias) if bias is not None else None
    m, n = weight.data.shape
    batched = x.data.ndim == 2
    if (batched and x.data.shape[1] != n) or (not batched and x.data.shape != (n,)):
        raise ShapeError(f"linear expects input of width {n}, got {x.shape}")
    if bias is not None and bias.data.shape != (m,):
        raise ShapeError(f"linear bias must have shape ({m},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    res = make_op(out, parents)
    if res.requires_grad:

        def bw():
            dy = res.grad
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(dy.sum(axis=0) if batched else dy)
            if weight.requires_grad:
                weight.accumulate_grad(dy.T @ x.data if batched else np.outer(dy, x.data))
            if x.requires_grad:
                x.accumulate_grad(dy @ weight.data)

        res._backward = bw
    return res


def matmul(a, b) -> Tensor:
    """Plain 2-D matrix product with gradients to both operands."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    res = make_op(a.data @ b.data, (a, b))
    if res.requires_grad:

        def bw():
            if a.requires_grad:
                a.accumulate_grad(res.grad @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ res.grad)

        res._backward = bw
    return res


def relu(x) -> Tensor:
    x = _as_tensor(x)
    res = make_op(np.maximum(x.data, 0.0), (x,))
    if res.requires_grad:

        def bw():
            x.accumulate_grad(res.grad * (x.data > 0.0))

        res._backward = bw
    return res


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    res = make_op(out, (x,))
    if res.requires_grad:

        def bw():
            x.accumulate_grad(res.grad * (1.0 - out * out))

        res._backward = bw
    return res


def avg_pool_last(x) -> Tensor:
    """Mean over the last axis, kept as a singleton dimension."""
    x = _as_tensor(x)
    if x.data.ndim < 1 or x.data.shape[-1] < 1:
        raise ShapeError(f"avg_pool_last needs a non-empty last axis, got {x.shape}")
    width = x.data.shape[-1]
    res = make_op(x.data.mean(axis=-1, keepdims=True), (x,))
    if res.requires_grad:

        def bw():
            x.accumulate_grad(np.broadcast_to(res.grad / width, x.data.shape))

        res._backward = bw
    return res


def mean_over_set(xs: Sequence) -> Tensor:
    """Elementwise mean of equally-shaped vectors, independent of input order.

    Rows are put in a canonical (lexicographic) order before the reduction, so
    any permutation of the same inputs produces a bit-identical result. The
    gradient of a mean is uniform, hence order-free on the way back.
    """
    inputs = tuple(_as_tensor(v) for v in xs)
    if not inputs:
        raise AggregationError("mean_over_set of an empty collection")
    shape = inputs[0].data.shape
    if any(v.data.shape != shape for v in inputs):
        raise ShapeError("mean_over_set inputs must share one shape")
    stacked = np.stack([v.data.ravel() for v in inputs])
    order = np.lexsort(stacked.T[::-1])
    res = make_op(stacked[order].mean(axis=0).reshape(shape), inputs)
    if res.requires_grad:
        k = len(inputs)

        def bw():
            share = res.grad / k
            for v in inputs:
                if v.requires_grad:
                    v.accumulate_grad(share)

        res._backward = bw
    return res


def concat(a, b, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    res = make_op(np.concatenate([a.data, b.data], axis=axis), (a, b))
    if res.requires_grad:
        na = a.data.shape[axis]

        def bw():
            ga, gb = np.split(res.grad, [na], axis=axis)
            if a.requires_grad:
                a.accumulate_grad(ga)
            if b.requires_grad:
                b.accumulate_grad(gb)

        res._backward = bw
    return res


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ShapeError("mse of empty tensors")
    diff = pred.data - target.data
    res = make_op(np.mean(diff * diff), (pred, target))
    if res.requires_grad:
        scale = 2.0 / pred.data.size

        def bw():
            g = (scale * float(res.grad)) * diff
            if pred.requires_grad:
                pred.accumulate_grad(g)
            if target.requires_grad:
                target.accumulate_grad(-g)

        res._backward = bw
    return res


def embedding_lookup(table, index) -> Tensor:
    """Row lookup into an embedding table; gradients hit only the used rows.

    ``index`` may be a python int (returns one row) or an integer array
    (returns one row per entry).
    """
    table = _as_tensor(table)
    n_rows = table.data.shape[0]
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise IndexError(f"embedding index must be integral, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"embedding index out of range [0, {n_rows}): "
                         f"{idx.min()}..{idx.max()}")
    res = make_op(table.data[idx], (table,))
    if res.requires_grad:

        def bw():
            g = np.zeros_like(table.data)
            np.add.at(g, idx, res.grad)
            table.accumulate_grad(g)

        res._backward = bw
    return res
