"""Differentiable primitives.

Every primitive computes its forward value with numpy and registers an exact
vector-Jacobian product on the tape.  Outputs keep the dtype of the first
tensor operand.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

__all__ = [
    "add",
    "add_scalar",
    "neg",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "sum",
    "mean",
    "log_sum_exp",
    "l2_normalize",
    "concat",
    "mean_pool_spatial",
    "conv2d",
    "conv_output_size",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=like.dtype)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: Tensor, b) -> Tensor:
    b = _const(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    out = (a.data + b.data).astype(a.dtype, copy=False)
    return Tensor._from_op("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op("add_scalar", a.data + a.dtype.type(c), (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return Tensor._from_op("scale", a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    b = _const(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = (ad * bd).astype(a.dtype, copy=False)

    def vjp(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._from_op("mul", out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return Tensor._from_op("matmul", (ad @ bd).astype(a.dtype, copy=False), (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return Tensor._from_op("transpose", a.data.T, (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum keeps NaN so divergence stays visible downstream
    return Tensor._from_op("relu", np.maximum(a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return Tensor._from_op("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        out = np.asarray(a.data.sum(), dtype=a.dtype)
        return Tensor._from_op("sum", out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.ndim
    out = a.data.sum(axis=ax)
    return Tensor._from_op(
        "sum", out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)
    )


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum(a), 1.0 / n)


def log_sum_exp(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable ``log(sum(exp(a), axis))``; tolerates ``-inf`` entries."""
    ax = axis % a.ndim
    m = np.max(a.data, axis=ax, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(a.data - m)
    s = e.sum(axis=ax, keepdims=True)
    out = (np.log(s) + m).squeeze(ax)
    soft = e / s
    return Tensor._from_op("log_sum_exp", out.astype(a.dtype), (a,), lambda g: (np.expand_dims(g, ax) * soft,))


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-d tensor to unit length: ``x / (||x|| + eps)``."""
    if a.ndim != 2:
        raise ShapeError("l2_normalize", a.shape)
    x = a.data
    n = np.sqrt((x * x).sum(axis=1, keepdims=True))
    d = n + eps
    y = x / d
    safe_n = np.where(n > 0, n, 1)

    def vjp(g):
        gx = (g * x).sum(axis=1, keepdims=True)
        return (g / d - x * gx / (safe_n * d * d),)

    return Tensor._from_op("l2_normalize", y.astype(a.dtype), (a,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError("concat", ref.shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax).astype(ref.dtype, copy=False)
    return Tensor._from_op("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def mean_pool_spatial(a: Tensor) -> Tensor:
    """Global average pooling ``(N, C, H, W) -> (N, C)``."""
    if a.ndim != 4:
        raise ShapeError("mean_pool_spatial", a.shape)
    n, c, h, w = a.shape
    out = a.data.mean(axis=(2, 3))
    inv = a.dtype.type(1.0 / (h * w))
    return Tensor._from_op(
        "mean_pool_spatial",
        out,
        (a,),
        lambda g: (np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy(),),
    )


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of ``(N, C, H, W)`` input with ``(O, C, kh, kw)``
    weights plus an optional per-output-channel bias ``(O,)``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d", x.shape, w.shape)
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2).astype(x.dtype, copy=False)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gmat.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gmat.sum(axis=0)
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return Tensor._from_op("conv2d", out, inputs, vjp)
