"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and accumulation order mirror the Cython module so the two
backends agree bit-for-bit on im2col/col2im and nearest resampling.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage


def im2col3d(xp: np.ndarray, k: int, s: int, od: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, k, od, oh, ow), dtype=np.float32)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                cols[:, :, kd, kh, kw] = xp[
                    :, :,
                    kd:kd + s * (od - 1) + 1:s,
                    kh:kh + s * (oh - 1) + 1:s,
                    kw:kw + s * (ow - 1) + 1:s,
                ]
    return cols.reshape(n, c * k ** 3, od * oh * ow)


def col2im3d(cols: np.ndarray, n_chan: int, dp: int, hp: int, wp: int,
             k: int, s: int, od: int, oh: int, ow: int) -> np.ndarray:
    n = cols.shape[0]
    cols = cols.reshape(n, n_chan, k, k, k, od, oh, ow)
    xp = np.zeros((n, n_chan, dp, hp, wp), dtype=np.float32)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                xp[
                    :, :,
                    kd:kd + s * (od - 1) + 1:s,
                    kh:kh + s * (oh - 1) + 1:s,
                    kw:kw + s * (ow - 1) + 1:s,
                ] += cols[:, :, kd, kh, kw]
    return xp


_FULL_26 = np.ones((3, 3, 3), dtype=bool)


def label26(mask: np.ndarray) -> tuple[np.ndarray, int]:
    labels, count = ndimage.label(mask, structure=_FULL_26)
    return labels.astype(np.int32), int(count)


def resample_affine(src: np.ndarray, a: np.ndarray, b: np.ndarray,
                    nx: int, ny: int, nz: int, order: int) -> np.ndarray:
    i, j, k = np.meshgrid(
        np.arange(nx, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nz, dtype=np.float64),
        indexing="ij",
    )
    px = a[0, 0] * i + a[0, 1] * j + a[0, 2] * k + b[0]
    py = a[1, 0] * i + a[1, 1] * j + a[1, 2] * k + b[1]
    pz = a[2, 0] * i + a[2, 1] * j + a[2, 2] * k + b[2]
    sx, sy, sz = src.shape
    if order == 0:
        xi = np.floor(px + 0.5).astype(np.intp)
        yi = np.floor(py + 0.5).astype(np.intp)
        zi = np.floor(pz + 0.5).astype(np.intp)
        ok = (xi >= 0) & (xi < sx) & (yi >= 0) & (yi < sy) & (zi >= 0) & (zi < sz)
        out = np.zeros((nx, ny, nz), dtype=np.float32)
        out[ok] = src[xi[ok], yi[ok], zi[ok]]
        return out

    x0 = np.floor(px)
    y0 = np.floor(py)
    z0 = np.floor(pz)
    fx, fy, fz = px - x0, py - y0, pz - z0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    z0 = z0.astype(np.intp)
    acc = np.zeros((nx, ny, nz), dtype=np.float64)
    for ci in range(2):
        xi = x0 + ci
        okx = (xi >= 0) & (xi < sx)
        wx = fx if ci else 1.0 - fx
        for cj in range(2):
            yi = y0 + cj
            oky = okx & (yi >= 0) & (yi < sy)
            wy = fy if cj else 1.0 - fy
            for ck in range(2):
                zi = z0 + ck
                ok = oky & (zi >= 0) & (zi < sz)
                wz = fz if ck else 1.0 - fz
                vals = src[np.clip(xi, 0, sx - 1), np.clip(yi, 0, sy - 1), np.clip(zi, 0, sz - 1)]
                acc = acc + np.where(ok, (wx * wy * wz) * vals, 0.0)
    return acc.astype(np.float32)
