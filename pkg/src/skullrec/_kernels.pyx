# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and the same floating-point summation order, so both backends
produce identical results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def im2col3d(const float[:, :, :, :, ::1] xp, int k, int s, int od, int oh, int ow):
    """Unfold a padded (N, C, D, H, W) array into (N, C*k^3, od*oh*ow) columns."""
    cdef Py_ssize_t n_batch = xp.shape[0], n_chan = xp.shape[1]
    cdef Py_ssize_t n, c, kd, kh, kw, d, h, w, row, col
    out = np.empty((n_batch, n_chan * k * k * k, od * oh * ow), dtype=np.float32)
    cdef float[:, :, ::1] cols = out
    for n in range(n_batch):
        for c in range(n_chan):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        row = ((c * k + kd) * k + kh) * k + kw
                        col = 0
                        for d in range(od):
                            for h in range(oh):
                                for w in range(ow):
                                    cols[n, row, col] = xp[n, c, d * s + kd, h * s + kh, w * s + kw]
                                    col += 1
    return out


def col2im3d(const float[:, :, ::1] cols, int n_chan, int dp, int hp, int wp,
             int k, int s, int od, int oh, int ow):
    """Scatter-add columns back onto a zeroed padded (N, C, dp, hp, wp) canvas."""
    cdef Py_ssize_t n_batch = cols.shape[0]
    cdef Py_ssize_t n, c, kd, kh, kw, d, h, w, row, col
    out = np.zeros((n_batch, n_chan, dp, hp, wp), dtype=np.float32)
    cdef float[:, :, :, :, ::1] xp = out
    for n in range(n_batch):
        for c in range(n_chan):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        row = ((c * k + kd) * k + kh) * k + kw
                        col = 0
                        for d in range(od):
                            for h in range(oh):
                                for w in range(ow):
                                    xp[n, c, d * s + kd, h * s + kh, w * s + kw] += cols[n, row, col]
                                    col += 1
    return out


cdef Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) nogil:
    cdef Py_ssize_t root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


cdef void _union(Py_ssize_t[::1] parent, Py_ssize_t a, Py_ssize_t b) nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label26(const unsigned char[:, :, ::1] mask):
    """26-connected labeling. Labels are numbered 1.. in C-order of first voxel."""
    cdef Py_ssize_t nx = mask.shape[0], ny = mask.shape[1], nz = mask.shape[2]
    cdef Py_ssize_t total = nx * ny * nz
    parent_arr = np.arange(total, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t x, y, z, dx, dy, dz, xx, yy, zz, idx
    with nogil:
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if mask[x, y, z] == 0:
                        continue
                    idx = (x * ny + y) * nz + z
                    # only already-visited neighbours (13 of 26)
                    for dx in range(-1, 1):
                        xx = x + dx
                        if xx < 0:
                            continue
                        for dy in range(-1, 2):
                            yy = y + dy
                            if yy < 0 or yy >= ny:
                                continue
                            if dx == 0 and dy == 1:
                                continue
                            for dz in range(-1, 2):
                                zz = z + dz
                                if zz < 0 or zz >= nz:
                                    continue
                                if dx == 0 and dy == 0 and dz >= 0:
                                    continue
                                if mask[xx, yy, zz]:
                                    _union(parent, idx, (xx * ny + yy) * nz + zz)
    labels_arr = np.zeros((nx, ny, nz), dtype=np.int32)
    cdef int[:, :, ::1] labels = labels_arr
    root_label_arr = np.zeros(total, dtype=np.int32)
    cdef int[::1] root_label = root_label_arr
    cdef int count = 0
    cdef Py_ssize_t root
    with nogil:
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if mask[x, y, z] == 0:
                        continue
                    root = _find(parent, (x * ny + y) * nz + z)
                    if root_label[root] == 0:
                        count += 1
                        root_label[root] = count
                    labels[x, y, z] = root_label[root]
    return labels_arr, count


def resample_affine(const float[:, :, ::1] src, const double[:, ::1] a, const double[::1] b,
                    int nx, int ny, int nz, int order):
    """out[i] = src(a @ i + b); nearest (order 0) or trilinear (order 1), zero outside."""
    cdef Py_ssize_t sx = src.shape[0], sy = src.shape[1], sz = src.shape[2]
    cdef Py_ssize_t i, j, k, x0, y0, z0, xi, yi, zi, ci, cj, ck
    cdef double px, py, pz, fx, fy, fz, acc, wx, wy, wz
    out = np.zeros((nx, ny, nz), dtype=np.float32)
    cdef float[:, :, ::1] dst = out
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    px = a[0, 0] * i + a[0, 1] * j + a[0, 2] * k + b[0]
                    py = a[1, 0] * i + a[1, 1] * j + a[1, 2] * k + b[1]
                    pz = a[2, 0] * i + a[2, 1] * j + a[2, 2] * k + b[2]
                    if order == 0:
                        xi = <Py_ssize_t>floor(px + 0.5)
                        yi = <Py_ssize_t>floor(py + 0.5)
                        zi = <Py_ssize_t>floor(pz + 0.5)
                        if 0 <= xi < sx and 0 <= yi < sy and 0 <= zi < sz:
                            dst[i, j, k] = src[xi, yi, zi]
                        continue
                    x0 = <Py_ssize_t>floor(px)
                    y0 = <Py_ssize_t>floor(py)
                    z0 = <Py_ssize_t>floor(pz)
                    if x0 < -1 or x0 >= sx or y0 < -1 or y0 >= sy or z0 < -1 or z0 >= sz:
                        continue
                    fx = px - x0
                    fy = py - y0
                    fz = pz - z0
                    acc = 0.0
                    for ci in range(2):
                        xi = x0 + ci
                        if xi < 0 or xi >= sx:
                            continue
                        wx = fx if ci else 1.0 - fx
                        for cj in range(2):
                            yi = y0 + cj
                            if yi < 0 or yi >= sy:
                                continue
                            wy = fy if cj else 1.0 - fy
                            for ck in range(2):
                                zi = z0 + ck
                                if zi < 0 or zi >= sz:
                                    continue
                                wz = fz if ck else 1.0 - fz
                                acc = acc + (wx * wy * wz) * src[xi, yi, zi]
                    dst[i, j, k] = <float>acc
    return out
