"""Similarity-transform alignment of binary masks and implant extraction.

A transform maps world points (mm) as ``p -> s * R @ (p - c) + c + t``.
Registration maximises the overlap of Gaussian-smoothed masks, sampled at
each other's foreground voxels, with Nelder-Mead over (log scale, rotation
vector, translation), starting from centroid and second-moment estimates.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial.transform import Rotation

from . import kernels
from .defects import EmptyImplant
from .losses import dice_metric
from .volume import U8, Volume, require_binary, require_same_dims
from .voxel_ops import largest_component, subtract

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.80


class EmptyForeground(ValueError):
    pass


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def _matrix_to_quat(r: np.ndarray) -> tuple[float, float, float, float]:
    x, y, z, w = Rotation.from_matrix(r).as_quat()
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return (float(w), float(x), float(y), float(z))


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float = 1.0
    quaternion: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError("quaternion must be nonzero and finite")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "quaternion", tuple(float(v) for v in q / norm))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @classmethod
    def from_params(cls, scale: float, rotvec, translation, center) -> "SimilarityTransform":
        x, y, z, w = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
        return cls(scale, (w, x, y, z), tuple(translation), tuple(center))

    @classmethod
    def from_affine(cls, a: np.ndarray, b: np.ndarray, center) -> "SimilarityTransform":
        """Split ``p -> a @ p + b`` (a = s * R) around ``center``."""
        s = float(np.cbrt(np.linalg.det(a)))
        c = np.asarray(center, dtype=np.float64)
        t = b - c + a @ c
        return cls(s, _matrix_to_quat(a / s), tuple(t), tuple(c))

    @property
    def rotation(self) -> np.ndarray:
        return _quat_to_matrix(self.quaternion)

    @property
    def rotvec(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        return Rotation.from_quat([x, y, z, w]).as_rotvec()

    @property
    def angle_deg(self) -> float:
        return float(np.degrees(np.linalg.norm(self.rotvec)))

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.scale * self.rotation
        c = np.asarray(self.center)
        return a, c + np.asarray(self.translation) - a @ c

    def apply_points(self, pts) -> np.ndarray:
        a, b = self.affine()
        return np.asarray(pts, dtype=np.float64) @ a.T + b

    def inverse(self) -> "SimilarityTransform":
        a, b = self.affine()
        ai = np.linalg.inv(a)
        return SimilarityTransform.from_affine(ai, -ai @ b, self.center)

    def then(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``other`` applied after ``self``; keeps this transform's center."""
        a1, b1 = self.affine()
        a2, b2 = other.affine()
        return SimilarityTransform.from_affine(a2 @ a1, a2 @ b1 + b2, self.center)

    def to_json(self) -> dict:
        return {"scale": self.scale, "quaternion": list(self.quaternion),
                "translation_mm": list(self.translation), "center_mm": list(self.center)}

    @classmethod
    def from_json(cls, d: dict) -> "SimilarityTransform":
        return cls(d["scale"], tuple(d["quaternion"]), tuple(d["translation_mm"]), tuple(d["center_mm"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def grid_center(vol: Volume) -> tuple[float, float, float]:
    """World position of the middle of the voxel grid."""
    return tuple(o + s * (n - 1) / 2.0 for o, s, n in zip(vol.origin, vol.spacing, vol.dims))


def _index_affine(src: Volume, dst: Volume, t: SimilarityTransform):
    """Matrix/offset taking dst voxel indices to src voxel indices under t^-1."""
    a, b = t.affine()
    ai = np.linalg.inv(a)
    s_src = np.diag(1.0 / np.asarray(src.spacing))
    s_dst = np.diag(np.asarray(dst.spacing))
    m = s_src @ ai @ s_dst
    off = s_src @ (ai @ (np.asarray(dst.origin) - b) - np.asarray(src.origin))
    return np.ascontiguousarray(m), np.ascontiguousarray(off)


def _resample(data: np.ndarray, src: Volume, dst: Volume, t: SimilarityTransform, order: int) -> np.ndarray:
    m, off = _index_affine(src, dst, t)
    return kernels.resample_affine(np.ascontiguousarray(data, dtype=np.float32), m, off, *dst.dims, order)


def apply_transform(vol: Volume, t: SimilarityTransform, like: Volume | None = None,
                    order: int | None = None) -> Volume:
    """Resample ``vol`` so that ``out(x) = vol(t^-1(x))``; zero outside.

    Sampling defaults to nearest for uint8 volumes and trilinear for float32.
    The output lives on ``like``'s grid (default: ``vol``'s own grid).
    """
    like = like or vol
    if order is None:
        order = 0 if vol.dtype == U8 else 1
    out = _resample(vol.data, vol, like, t, order)
    if vol.dtype == U8:
        out = np.rint(out).astype(np.uint8)
    return Volume(out, like.spacing, like.origin)


@dataclass(frozen=True)
class RegistrationResult:
    transform: SimilarityTransform
    dice: float
    converged: bool
    iterations: int

    def to_json(self) -> dict:
        return {"transform": self.transform.to_json(), "dice": self.dice,
                "converged": self.converged, "iterations": self.iterations}


def _moments(vol: Volume) -> tuple[np.ndarray, float]:
    pts = _world_points(vol)
    centroid = pts.mean(axis=0)
    spread = float(((pts - centroid) ** 2).sum(axis=1).mean())
    return centroid, spread


# Nelder-Mead works on parameters divided by these step sizes.
_STEP_LOG_SCALE = 0.05
_STEP_ROT = np.radians(6.0)
_STEP_TRANS_VOX = 2.0
SIGMAS = (2.0, 1.0)


def _world_points(vol: Volume) -> np.ndarray:
    return np.asarray(vol.origin) + np.argwhere(vol.data).astype(np.float64) * np.asarray(vol.spacing)


class _SmoothField:
    """Gaussian-smoothed mask sampled with cubic B-splines at world points."""

    def __init__(self, vol: Volume, sigma: float):
        smooth = ndimage.gaussian_filter(vol.data.astype(np.float64), sigma, mode="constant")
        self.coeffs = ndimage.spline_filter(smooth, order=3, mode="grid-constant")
        self.origin = np.asarray(vol.origin)
        self.spacing = np.asarray(vol.spacing)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        idx = (pts - self.origin) / self.spacing
        return ndimage.map_coordinates(self.coeffs, idx.T, order=3, prefilter=False,
                                       mode="grid-constant", cval=0.0)


class _Objective:
    """One minus the symmetric mean of each smoothed mask at the other's mapped voxels.

    Moving voxels flagged in ``ignore`` are left out of the forward term.
    Sampling a smooth field at points (rather than warping a whole grid
    with trilinear weights) keeps the cost free of the grid-aligned bias
    that interpolation blur introduces.
    """

    def __init__(self, moving: Volume, fixed: Volume, center, sigma: float, ignore: Volume | None = None):
        self.center = np.asarray(center)
        self.pm = _world_points(moving)
        self.pf = _world_points(fixed)
        self.fm = _SmoothField(moving, sigma)
        self.ff = _SmoothField(fixed, sigma)
        self.norm_m = float(self.fm(self.pm).mean())
        self.norm_f = float(self.ff(self.pf).mean())
        if ignore is not None:
            self.pm = self.pm[ignore.data[moving.data.astype(bool)] == 0]
        self.step_t = _STEP_TRANS_VOX * float(np.mean(fixed.spacing))
        self.evals = 0

    def transform(self, z) -> SimilarityTransform:
        z = np.asarray(z, dtype=np.float64)
        return SimilarityTransform.from_params(
            float(np.exp(z[0] * _STEP_LOG_SCALE)), z[1:4] * _STEP_ROT, z[4:7] * self.step_t, self.center)

    def encode(self, t: SimilarityTransform) -> np.ndarray:
        return np.concatenate([[np.log(t.scale) / _STEP_LOG_SCALE], t.rotvec / _STEP_ROT,
                               np.asarray(t.translation) / self.step_t])

    def __call__(self, z) -> float:
        self.evals += 1
        t = self.transform(z)
        a, b = t.affine()
        ai = np.linalg.inv(a)
        fwd = float(self.ff(self.pm @ a.T + b).mean()) / self.norm_f
        back = float(self.fm((self.pf - b) @ ai.T).mean()) / self.norm_m
        return 1.0 - 0.5 * (fwd + back)


def initial_transform(moving: Volume, fixed: Volume, center) -> SimilarityTransform:
    """Translation from centroids, scale from the ratio of second moments."""
    cm, spread_m = _moments(moving)
    cf, spread_f = _moments(fixed)
    s = float(np.sqrt(spread_f / spread_m)) if spread_m > 0 and spread_f > 0 else 1.0
    c = np.asarray(center)
    t = cf - c - s * (cm - c)
    return SimilarityTransform(s, (1.0, 0.0, 0.0, 0.0), tuple(t), tuple(c))


def _nelder_mead(obj, z, max_evals):
    simplex = np.vstack([z, z + np.eye(z.size)])
    res = optimize.minimize(obj, z, method="Nelder-Mead", options={
        "initial_simplex": simplex, "xatol": 1e-2, "fatol": 1e-6,
        "maxfev": max_evals, "adaptive": True,
    })
    return res.x, float(res.fun), int(res.nit)


def register_similarity(moving: Volume, fixed: Volume, threshold: float = DEFAULT_THRESHOLD,
                        sigmas=SIGMAS, center=None, max_restarts: int = 2,
                        max_evals: int = 2000, init: SimilarityTransform | None = None,
                        ignore: Volume | None = None) -> RegistrationResult:
    """Find T with apply_transform(moving, T) ~ fixed.

    Smoothing runs coarse to fine over ``sigmas`` (voxels), each level
    seeded by the previous one. The rotation centre defaults to the middle
    of ``moving``'s grid. ``converged`` reports whether the hard Dice after
    alignment reaches ``threshold``; the result is returned either way.
    ``init`` replaces the moment-based start. Foreground voxels of
    ``moving`` set in ``ignore`` (same grid) do not count against the fit.
    """
    require_binary(moving, "moving")
    require_binary(fixed, "fixed")
    if not moving.data.any():
        raise EmptyForeground("moving volume has no foreground")
    if not fixed.data.any():
        raise EmptyForeground("fixed volume has no foreground")
    if ignore is not None:
        require_same_dims(moving, ignore)
        if not (moving.data.astype(bool) & (ignore.data == 0)).any():
            raise EmptyForeground("every moving voxel is ignored")
    center = grid_center(moving) if center is None else tuple(center)
    z = None
    iterations = 0
    for sigma in sigmas:
        obj = _Objective(moving, fixed, center, sigma, ignore)
        if z is None:
            z = obj.encode(initial_transform(moving, fixed, center) if init is None else init)
        best = obj(z)
        for _ in range(max_restarts):
            zn, fn, nit = _nelder_mead(obj, z, max_evals)
            iterations += nit
            improved = best - fn
            if fn < best:
                z, best = zn, fn
            if improved < 1e-5:
                break
        log.debug("sigma=%g soft dice=%.5f evals=%d", sigma, 1 - best, obj.evals)
    t = obj.transform(z)
    aligned = apply_transform(moving, t, like=fixed, order=0)
    dice = dice_metric(aligned, fixed)
    return RegistrationResult(t, float(dice), bool(dice >= threshold), iterations)


def _implant_voxels(reconstruction: Volume, defective: Volume, t: SimilarityTransform) -> Volume:
    """Reconstruction voxels that ``t`` maps into the current implant candidate."""
    aligned = apply_transform(reconstruction, t, like=defective, order=0)
    candidate = largest_component(subtract(aligned, defective)).data
    a, b = t.affine()
    pts = _world_points(reconstruction) @ a.T + b
    idx = np.rint((pts - np.asarray(defective.origin)) / np.asarray(defective.spacing)).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(defective.dims)), axis=1)
    hit = np.zeros(len(pts), dtype=U8)
    hit[inside] = candidate[tuple(idx[inside].T)]
    out = np.zeros(reconstruction.dims, dtype=U8)
    out[tuple(np.argwhere(reconstruction.data).T)] = hit
    return Volume(out, reconstruction.spacing, reconstruction.origin)


def extract_implant(reconstruction: Volume, defective: Volume,
                    threshold: float = DEFAULT_THRESHOLD, refine: int = 3) -> tuple[Volume, RegistrationResult]:
    """Align the reconstruction to the defective input, subtract, keep the largest piece.

    The missing region has no counterpart in the defective input and would
    drag the fit toward it, so after a first pass the voxels that land in
    the implant candidate are ignored and the fit is refined.
    """
    require_same_dims(reconstruction, defective)
    require_binary(reconstruction, "reconstruction")
    require_binary(defective, "defective input")
    result = register_similarity(reconstruction, defective, threshold)
    for _ in range(refine):
        ignore = _implant_voxels(reconstruction, defective, result.transform)
        if ignore.count() >= reconstruction.count():
            break
        result = register_similarity(reconstruction, defective, threshold, init=result.transform, ignore=ignore)
    aligned = apply_transform(reconstruction, result.transform, like=defective, order=0)
    implant = largest_component(subtract(aligned, defective))
    if not implant.data.any():
        raise EmptyImplant("nothing left after subtracting the defective input")
    if not result.converged:
        log.warning("registration did not converge (dice %.3f < %.2f); implant may be wrong",
                    result.dice, threshold)
    return implant, result
