"""Resizing, cropping, set operations, connected components and phantoms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .volume import Volume, require_binary, require_same_dims


class RegionOutOfBounds(ValueError):
    pass


class SpecDoesNotFit(ValueError):
    pass


# -- resize -----------------------------------------------------------------

def area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) box-overlap matrix; each row sums to 1.

    Output cell j spans input interval [j*n_in/n_out, (j+1)*n_in/n_out).
    Everything is scaled by n_out so the overlaps are integers.
    """
    j = np.arange(n_out)[:, None]
    i = np.arange(n_in)[None, :]
    lo = np.maximum(j * n_in, i * n_out)
    hi = np.minimum((j + 1) * n_in, (i + 1) * n_out)
    overlap = np.clip(hi - lo, 0, None)
    return overlap / float(n_in)


def resize_area(vol: Volume, target) -> Volume:
    target = tuple(int(n) for n in target)
    if len(target) != 3 or min(target) < 1:
        raise ValueError(f"target dims must be 3 positive ints, got {target}")
    out = vol.data.astype(np.float64)
    for axis, (n_in, n_out) in enumerate(zip(vol.dims, target)):
        if n_in == n_out:
            continue
        w = area_weights(n_in, n_out)
        out = np.moveaxis(np.tensordot(w, out, axes=([1], [axis])), 0, axis)
    spacing = tuple(s * n_in / n_out for s, n_in, n_out in zip(vol.spacing, vol.dims, target))
    return Volume(out.astype(np.float32), spacing, vol.origin)


# -- crop / pad -------------------------------------------------------------

@dataclass(frozen=True)
class CropRegion:
    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def check(self, dims) -> None:
        if any(l < 0 for l in self.lo) or any(l >= h for l, h in zip(self.lo, self.hi)):
            raise RegionOutOfBounds(f"invalid region {self.lo}..{self.hi}")
        if any(h > n for h, n in zip(self.hi, dims)):
            raise RegionOutOfBounds(f"region {self.lo}..{self.hi} exceeds dims {dims}")

    @property
    def slices(self):
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


def crop(vol: Volume, region: CropRegion) -> Volume:
    region.check(vol.dims)
    origin = tuple(o + l * s for o, l, s in zip(vol.origin, region.lo, vol.spacing))
    return Volume(vol.data[region.slices], vol.spacing, origin)


def axial_region(dims, n_slices: int, axis: int = 2) -> CropRegion:
    """Centered region keeping ``n_slices`` along ``axis``; whole extent if already smaller."""
    n = dims[axis]
    keep = min(n_slices, n)
    start = (n - keep) // 2
    lo = [0, 0, 0]
    hi = list(dims)
    lo[axis], hi[axis] = start, start + keep
    return CropRegion(tuple(lo), tuple(hi))


def crop_axial(vol: Volume, n_slices: int, axis: int = 2) -> Volume:
    return crop(vol, axial_region(vol.dims, n_slices, axis))


def uncrop(vol: Volume, region: CropRegion, dims) -> Volume:
    """Zero-pad a cropped volume back into a grid of ``dims``."""
    region.check(dims)
    out = np.zeros(tuple(dims), dtype=vol.dtype)
    out[region.slices] = vol.data
    origin = tuple(o - l * s for o, l, s in zip(vol.origin, region.lo, vol.spacing))
    return Volume(out, vol.spacing, origin)


def bounding_box(vol: Volume) -> CropRegion | None:
    idx = np.nonzero(vol.data)
    if len(idx[0]) == 0:
        return None
    return CropRegion(tuple(int(i.min()) for i in idx), tuple(int(i.max()) + 1 for i in idx))


# -- set operations ---------------------------------------------------------

def boolean(a: Volume, b: Volume, op: str) -> Volume:
    require_same_dims(a, b)
    require_binary(a, "a")
    require_binary(b, "b")
    x, y = a.data.astype(bool), b.data.astype(bool)
    if op == "union":
        r = x | y
    elif op == "intersect":
        r = x & y
    elif op == "subtract":
        r = x & ~y
    else:
        raise ValueError(f"unknown boolean op {op!r}")
    return a.with_data(r.astype(np.uint8))


def union(a: Volume, b: Volume) -> Volume:
    return boolean(a, b, "union")


def intersect(a: Volume, b: Volume) -> Volume:
    return boolean(a, b, "intersect")


def subtract(a: Volume, b: Volume) -> Volume:
    return boolean(a, b, "subtract")


# -- connected components ---------------------------------------------------

def label_components(vol: Volume) -> tuple[np.ndarray, int]:
    """26-connected labels (int32, 0 = background) and component count."""
    return kernels.label26(np.ascontiguousarray(vol.data != 0, dtype=np.uint8))


def largest_component(vol: Volume) -> Volume:
    """Keep the 26-connected component with the most voxels.

    Ties go to the component whose first voxel (x-fastest linear index)
    comes earliest.
    """
    require_binary(vol)
    labels, count = label_components(vol)
    if count <= 1:
        return vol.with_data((labels > 0).astype(np.uint8))
    flat = labels.ravel(order="F")
    sizes = np.bincount(flat, minlength=count + 1)
    first = np.full(count + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    np.minimum.at(first, flat[nz], nz)
    sizes[0] = -1
    best = max(range(1, count + 1), key=lambda lab: (sizes[lab], -first[lab]))
    return vol.with_data((labels == best).astype(np.uint8))


# -- phantoms ---------------------------------------------------------------

@dataclass(frozen=True)
class PhantomSpec:
    """Ellipsoidal cranial shell plus an anterior (+y) face block.

    All lengths are in voxels; ``center`` may be fractional.
    """

    seed: int
    dims: tuple[int, int, int]
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    thickness: float
    face_half_width: float
    face_depth: float
    face_z: tuple[float, float]

    @classmethod
    def from_seed(cls, seed: int, dims) -> "PhantomSpec":
        nx, ny, nz = (int(n) for n in dims)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        jitter = rng.uniform(-0.04, 0.04, size=3)
        thickness = max(2.0, round(min(dims) / 12))
        face_depth = 0.12 * ny
        radii = (0.30 * nx * (1 + jitter[0]), 0.34 * ny * (1 + jitter[1]), 0.31 * nz * (1 + jitter[2]))
        center = (
            nx / 2 - 0.5 + rng.uniform(-0.5, 0.5),
            ny / 2 - 0.5 - face_depth / 2 + rng.uniform(-0.5, 0.5),
            nz / 2 - 0.5 + 0.04 * nz + rng.uniform(-0.5, 0.5),
        )
        return cls(
            seed=int(seed),
            dims=(nx, ny, nz),
            center=center,
            radii=radii,
            thickness=float(thickness),
            face_half_width=0.55 * radii[0],
            face_depth=face_depth,
            face_z=(-0.95 * radii[2], -0.25 * radii[2]),
        )

    def check(self) -> None:
        if self.thickness < 1:
            raise SpecDoesNotFit("shell thickness must be >= 1 voxel")
        if min(self.radii) <= self.thickness + 1:
            raise SpecDoesNotFit(f"radii {self.radii} too small for thickness {self.thickness}")
        cx, cy, cz = self.center
        rx, ry, rz = self.radii
        extent_lo = (cx - rx, cy - ry, cz + min(self.face_z[0], -rz))
        extent_hi = (cx + rx, cy + ry + self.face_depth, cz + rz)
        for lo, hi, n in zip(extent_lo, extent_hi, self.dims):
            if lo < 1 or hi > n - 2:
                raise SpecDoesNotFit(f"phantom does not fit inside dims {self.dims}")


def _grid(dims, center):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) - c for n, c in zip(dims, center)), indexing="ij")


def make_phantom(spec: PhantomSpec, spacing=(1.0, 1.0, 1.0)) -> Volume:
    spec.check()
    x, y, z = _grid(spec.dims, spec.center)
    rx, ry, rz = spec.radii
    t = spec.thickness
    outer = (x / rx) ** 2 + (y / ry) ** 2 + (z / rz) ** 2 <= 1.0
    inner = (x / (rx - t)) ** 2 + (y / (ry - t)) ** 2 + (z / (rz - t)) ** 2 <= 1.0
    shell = outer & ~inner
    face = (
        (np.abs(x) <= spec.face_half_width)
        & (y >= 0.55 * ry)
        & (y <= ry + spec.face_depth)
        & (z >= spec.face_z[0])
        & (z <= spec.face_z[1])
    )
    # the face block is a plate of shell thickness plus the part bridging to the cranium
    face_plate = face & ((y >= ry + spec.face_depth - t) | (np.abs(x) >= spec.face_half_width - t)
                         | (z <= spec.face_z[0] + t) | (z >= spec.face_z[1] - t))
    return Volume((shell | face_plate).astype(np.uint8), spacing)


def phantom(seed: int, dims=(32, 32, 32), spacing=(1.0, 1.0, 1.0)) -> Volume:
    return make_phantom(PhantomSpec.from_seed(seed, dims), spacing)

