"""Differentiable 3D layers: conv, transposed conv, PReLU, channel softmax.

Convolutions go through im2col/col2im (``skullrec.kernels``) followed by a
matmul. Weight layouts follow the usual conventions: conv kernels are
(Cout, Cin, k, k, k), transposed-conv kernels are (Cin, Cout, k, k, k).
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import ShapeMismatch, Tensor, as_tensor


def _out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _bmm(a: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """(M, K) @ (N, K, L) -> (N, M, L), one GEMM per batch item."""
    return np.stack([a @ cols[n] for n in range(cols.shape[0])])


def _check_conv(x: np.ndarray, w: np.ndarray, b, cin_axis: int) -> None:
    if x.ndim != 5:
        raise ShapeMismatch(f"input must be (N, C, D, H, W), got {x.shape}")
    if w.ndim != 5 or not (w.shape[2] == w.shape[3] == w.shape[4]):
        raise ShapeMismatch(f"kernel must be cubic 5D, got {w.shape}")
    if w.shape[cin_axis] != x.shape[1]:
        raise ShapeMismatch(f"kernel expects {w.shape[cin_axis]} input channels, input has {x.shape[1]}")
    cout = w.shape[1 - cin_axis]
    if b is not None and b.data.shape != (cout,):
        raise ShapeMismatch(f"bias must have shape ({cout},), got {b.data.shape}")


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    _check_conv(x.data, w.data, b, cin_axis=1)
    n, cin, d, h, wd = x.data.shape
    cout, _, k = w.data.shape[:3]
    od, oh, ow = (_out_size(m, k, stride, padding) for m in (d, h, wd))
    if min(od, oh, ow) < 1:
        raise ShapeMismatch(f"kernel {k} with padding {padding} does not fit input {x.data.shape[2:]}")
    xp = _pad(x.data, padding)
    cols = kernels.im2col3d(xp, k, stride, od, oh, ow)
    wmat = w.data.reshape(cout, -1)
    out = _bmm(wmat, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, cout, od, oh, ow)

    def back(g):
        g = np.ascontiguousarray(g.reshape(n, cout, od * oh * ow))
        dw = sum(g[i] @ cols[i].T for i in range(n)).reshape(w.data.shape)
        dcols = np.ascontiguousarray(_bmm(wmat.T, g))
        dxp = kernels.col2im3d(dcols, cin, *xp.shape[2:], k, stride, od, oh, ow)
        dx = dxp[:, :, padding:padding + d, padding:padding + h, padding:padding + wd] if padding else dxp
        db = g.sum(axis=(0, 2)) if b is not None else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, back)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv3d` w.r.t. its input, plus bias.

    Output size per axis is (n - 1) * stride - 2 * padding + k + output_padding.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_conv(x.data, w.data, b, cin_axis=0)
    if output_padding != 0 and not 0 < output_padding < stride:
        raise ShapeMismatch("output_padding must be smaller than stride")
    n, cin, d, h, wd = x.data.shape
    cout, k = w.data.shape[1], w.data.shape[2]
    full = [(m - 1) * stride + k + output_padding for m in (d, h, wd)]
    out_dims = [f - 2 * padding for f in full]
    if min(out_dims) < 1:
        raise ShapeMismatch(f"transposed conv output would be empty: {out_dims}")
    wmat = w.data.reshape(cin, cout * k ** 3)
    xs = np.ascontiguousarray(x.data.reshape(n, cin, d * h * wd))
    cols = np.ascontiguousarray(_bmm(wmat.T, xs))
    canvas = kernels.col2im3d(cols, cout, *full, k, stride, d, h, wd)
    od, oh, ow = out_dims
    out = canvas[:, :, padding:padding + od, padding:padding + oh, padding:padding + ow]
    if b is not None:
        out = out + b.data[None, :, None, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gp = np.zeros((n, cout, *full), dtype=np.float32)
        gp[:, :, padding:padding + od, padding:padding + oh, padding:padding + ow] = g
        gcols = kernels.im2col3d(gp, k, stride, d, h, wd)
        dx = _bmm(wmat, gcols).reshape(x.data.shape)
        dw = sum(xs[i] @ gcols[i].T for i in range(n)).reshape(w.data.shape)
        db = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, back)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """x where x > 0, else alpha * x; ``alpha`` is a 1-element tensor."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    a = alpha.data.reshape(-1)[0]
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def back(g):
        dx = np.where(pos, g, a * g)
        da = np.array(np.sum(np.where(pos, 0.0, g * x.data), dtype=np.float64), dtype=np.float32)
        return dx, da.reshape(alpha.data.shape)

    return Tensor._make(out.astype(np.float32), (x, alpha), back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor._make(np.where(pos, x.data, 0).astype(np.float32), (x,), lambda g: (np.where(pos, g, 0),))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1, max-subtracted for stability."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=1, keepdims=True)).astype(np.float32)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._make(p, (x,), back)
