from __future__ import annotations

import numpy as np

from ..volume import Volume
from .errors import UnsupportedFeature

_AXIS_TOL = 1e-6


def axis_aligned_volume(data: np.ndarray, axes: np.ndarray, origin) -> Volume:
    """Map an index-to-world matrix onto a plain grid.

    ``axes`` has one column per voxel axis (direction times spacing). Only
    diagonal matrices are accepted; a negative entry flips that axis so the
    stored spacing stays positive.
    """
    axes = np.asarray(axes, dtype=np.float64)
    if not np.all(np.isfinite(axes)):
        raise UnsupportedFeature("non-finite orientation matrix")
    diag = np.diag(axes).copy()
    off = axes - np.diag(diag)
    scale = max(np.abs(diag).max(), 1e-30)
    if np.abs(off).max() > _AXIS_TOL * scale or np.any(diag == 0):
        raise UnsupportedFeature("only axis-aligned orientations are supported")
    origin = [float(o) for o in origin]
    for axis in range(3):
        if diag[axis] < 0:
            data = np.flip(data, axis=axis)
            origin[axis] += diag[axis] * (data.shape[axis] - 1)
            diag[axis] = -diag[axis]
    return Volume(np.ascontiguousarray(data), tuple(float(d) for d in diag), tuple(origin))
