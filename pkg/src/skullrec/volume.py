"""The :class:`Volume` voxel grid shared by every stage of the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

U8 = np.dtype(np.uint8)
F32 = np.dtype(np.float32)
SUPPORTED_DTYPES = (U8, F32)


class DimsMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D grid indexed ``data[x, y, z]``.

    Serialized formats store voxels with x varying fastest, which is
    Fortran order for this array. ``spacing`` is mm per voxel and
    ``origin`` the mm position of voxel (0, 0, 0). The array is made
    read-only on construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"Volume data must be 3D, got shape {data.shape}")
        if data.dtype not in SUPPORTED_DTYPES:
            raise ValueError(f"Volume dtype must be uint8 or float32, got {data.dtype}")
        if min(data.shape) < 1:
            raise ValueError(f"Volume dims must be >= 1, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin must have 3 components")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be positive and finite, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise ValueError(f"origin must be finite, got {origin}")
        if data.flags.writeable or not data.flags.c_contiguous:
            data = np.array(data, order="C", copy=True)
            data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_binary(self) -> bool:
        return self.dtype == U8 and bool(np.all(self.data <= 1))

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new voxels (dims may differ only through explicit ops)."""
        return Volume(data, self.spacing, self.origin)

    def voxel_bytes(self) -> bytes:
        """Voxel payload with x fastest, little-endian."""
        return np.asfortranarray(self.data).astype(self.dtype.newbyteorder("<"), copy=False).tobytes(order="F")

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.dtype == other.dtype
            and self.spacing == other.spacing
            and self.origin == other.origin
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None

    def __repr__(self):
        return (f"Volume(dims={self.dims}, dtype={self.dtype.name}, "
                f"spacing={self.spacing}, origin={self.origin})")


def from_voxel_bytes(payload: bytes, dims, dtype, big_endian: bool = False) -> np.ndarray:
    """Inverse of :meth:`Volume.voxel_bytes` for a given byte order."""
    dt = np.dtype(dtype).newbyteorder(">" if big_endian else "<")
    flat = np.frombuffer(payload, dtype=dt)
    arr = flat.reshape(tuple(dims), order="F")
    return np.ascontiguousarray(arr.astype(np.dtype(dtype).newbyteorder("=")))


def binarize(vol: Volume, threshold: float = 0.5) -> Volume:
    """U8 volume with 1 where the input exceeds ``threshold``."""
    return vol.with_data((vol.data > threshold).astype(np.uint8))


def require_binary(vol: Volume, name: str = "volume") -> None:
    if not vol.is_binary:
        raise NotBinary(f"{name} must be a binary uint8 volume with values in {{0, 1}}")


def require_same_dims(a: Volume, b: Volume) -> None:
    if a.dims != b.dims:
        raise DimsMismatch(f"dims differ: {a.dims} vs {b.dims}")


class NotBinary(ValueError):
    pass
