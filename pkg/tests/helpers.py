"""Shared generators and oracles for the test suite."""
import gzip

import numpy as np
from hypothesis import strategies as st

from skullrec.formats.nifti import write_nifti
from skullrec.formats.nrrd import write_nrrd
from skullrec.volume import Volume


def random_volume(rng: np.random.Generator, max_dim: int = 16) -> Volume:
    """Random U8 or F32 volume with f32-representable geometry."""
    dims = tuple(int(n) for n in rng.integers(1, max_dim + 1, size=3))
    if rng.random() < 0.5:
        data = rng.integers(0, 256, size=dims, dtype=np.uint8)
    else:
        data = rng.standard_normal(dims).astype(np.float32) * np.float32(rng.choice([1e-3, 1.0, 1e4]))
    spacing = tuple(float(np.float32(v)) for v in rng.uniform(0.1, 3.0, 3))
    origin = tuple(float(np.float32(v)) for v in rng.uniform(-200, 200, 3))
    return Volume(data, spacing, origin)


@st.composite
def volumes(draw, max_dim: int = 16):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_volume(np.random.default_rng(seed), max_dim)


_NRRD_NOISE = [b"-1", b"0", b"99999999999", b"nan", b"inf", b"(", b")", b",", b"none", b" ", b"\n",
               b"gzip", b"raw", b"big", b"double", b"4", b"1e308", b":", b"\x00", b"\xff"]


def _mutate_nrrd(data: bytes, rng) -> bytes:
    end = data.index(b"\n\n")
    head, payload = bytearray(data[:end]), data[end:]
    lines = head.split(b"\n")
    op = rng.integers(6)
    if op == 0:
        i = rng.integers(len(head))
        head[i] = rng.integers(256)
        return bytes(head) + payload
    if op == 1:
        del lines[rng.integers(1, len(lines))]
    elif op == 2:
        i = rng.integers(1, len(lines))
        key = lines[i].split(b":")[0]
        lines[i] = key + b": " + b" ".join(_NRRD_NOISE[j] for j in rng.integers(len(_NRRD_NOISE), size=3))
    elif op == 3:
        i, j = rng.integers(len(lines), size=2)
        lines[i], lines[j] = lines[j], lines[i]
    elif op == 4:
        lines.insert(int(rng.integers(1, len(lines) + 1)), b"bogus field: " + _NRRD_NOISE[rng.integers(len(_NRRD_NOISE))])
    else:
        cut = int(rng.integers(0, len(payload)))
        return bytes(b"\n".join(lines)) + payload[:cut]
    return b"\n".join(lines) + payload


def _mutate_nifti(data: bytes, rng) -> bytes:
    buf = bytearray(data)
    op = rng.integers(4)
    if op == 0:
        for _ in range(int(rng.integers(1, 8))):
            buf[rng.integers(348)] = rng.integers(256)
    elif op == 1:
        # overwrite a header word with an extreme value
        off = int(rng.choice([0, 40, 42, 44, 46, 70, 72, 76, 80, 84, 88, 108, 112, 116, 252, 254, 256, 268, 280]))
        buf[off:off + 4] = rng.choice([b"\xff\xff\xff\xff", b"\x00\x00\x00\x00", b"\x7f\x7f\xff\xff",
                                       b"\x00\x00\xc0\x7f", b"\x01\x00\x00\x00"])
    elif op == 2:
        buf = buf[: int(rng.integers(0, len(buf)))]
    else:
        buf[344:348] = rng.choice([b"ni1\x00", b"n+2\x00", b"\x00\x00\x00\x00", b"n+1\x00"])
        buf[0:4] = rng.choice([b"\x5c\x01\x00\x00", b"\x00\x00\x01\x5c", b"\x00\x00\x00\x00"])
    return bytes(buf)


def mutated_headers(n: int, seed: int = 0):
    """Yield (format, bytes) pairs: valid files with corrupted headers."""
    rng = np.random.default_rng(seed)
    for i in range(n):
        vol = random_volume(rng, 6)
        if i % 2 == 0:
            base = write_nrrd(vol, "gzip" if rng.random() < 0.3 else "raw")
            yield "nrrd", _mutate_nrrd(base, rng)
        else:
            base = write_nifti(vol, gzip_output=False)
            out = _mutate_nifti(base, rng)
            if rng.random() < 0.2:
                out = gzip.compress(out, mtime=0)
            yield "nifti", out


def brute_sphere(dims, center, radius) -> np.ndarray:
    """Per-voxel loop oracle for the discrete ball."""
    out = np.zeros(dims, dtype=np.uint8)
    cx, cy, cz = center
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                if (i - cx) ** 2 + (j - cy) ** 2 + (k - cz) ** 2 <= radius ** 2:
                    out[i, j, k] = 1
    return out


def naive_conv3d(x, w, b, stride, padding):
    """Direct nested-loop convolution in float64."""
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, cin, d, h, wd = x.shape
    cout, _, k = w.shape[:3]
    xp = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3)
    od, oh, ow = ((m + 2 * padding - k) // stride + 1 for m in (d, h, wd))
    out = np.zeros((n, cout, od, oh, ow))
    for bi in range(n):
        for co in range(cout):
            for i in range(od):
                for j in range(oh):
                    for l in range(ow):
                        acc = 0.0 if b is None else float(b[co])
                        for ci in range(cin):
                            for a in range(k):
                                for c in range(k):
                                    for e in range(k):
                                        acc += w[co, ci, a, c, e] * xp[bi, ci, i * stride + a, j * stride + c, l * stride + e]
                        out[bi, co, i, j, l] = acc
    return out


def naive_conv_transpose3d(x, w, b, stride, padding, output_padding=0):
    """Scatter each input voxel times the kernel into the output, float64."""
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, cin, d, h, wd = x.shape
    cout, k = w.shape[1], w.shape[2]
    full = [(m - 1) * stride + k + output_padding for m in (d, h, wd)]
    canvas = np.zeros((n, cout, *full))
    for bi in range(n):
        for ci in range(cin):
            for i in range(d):
                for j in range(h):
                    for l in range(wd):
                        canvas[bi, :, i * stride:i * stride + k, j * stride:j * stride + k,
                               l * stride:l * stride + k] += x[bi, ci, i, j, l] * w[ci]
    od, oh, ow = (f - 2 * padding for f in full)
    out = canvas[:, :, padding:padding + od, padding:padding + oh, padding:padding + ow]
    if b is not None:
        out = out + np.asarray(b, np.float64)[None, :, None, None, None]
    return out


def fd_check(fn, inputs, rng, eps=1e-3, directions=3, floor=1e-2):
    """Central finite differences of a random projection of ``fn(*inputs)``.

    Each Tensor in ``inputs`` that requires grad is checked along random
    directions; returns the worst relative error seen. ``floor`` bounds the
    denominator so near-zero derivatives are judged on f32 rounding noise.
    """
    from skullrec.nn.tensor import Tensor, no_grad

    for t in inputs:
        if isinstance(t, Tensor):
            t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape).astype(np.float32)
    loss = (out * proj).sum()
    loss.backward()
    worst = 0.0
    for t in inputs:
        if not (isinstance(t, Tensor) and t.requires_grad):
            continue
        base = t.data.copy()
        grad = np.zeros(base.shape) if t.grad is None else t.grad
        for _ in range(directions):
            v = rng.standard_normal(base.shape).astype(np.float32)
            analytic = float(np.dot(grad.ravel().astype(np.float64), v.ravel().astype(np.float64)))
            vals = []
            for sign in (1, -1):
                t.data = (base + np.float32(sign * eps) * v).astype(np.float32)
                with no_grad():
                    y = fn(*inputs).data.astype(np.float64)
                vals.append(float(np.dot(y.ravel(), proj.ravel().astype(np.float64))))
            t.data = base
            numeric = (vals[0] - vals[1]) / (2 * eps)
            # random directions can nearly cancel; judge against the size of the terms
            scale = float(np.linalg.norm(grad.ravel() * v.ravel()))
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), scale, floor)
            worst = max(worst, rel)
    return worst
