"""Single-file NIfTI-1 (``n+1``) reader/writer, optionally gzipped."""
from __future__ import annotations

import gzip
import logging
import struct
import zlib

import numpy as np

from ..volume import F32, U8, Volume, from_voxel_bytes
from ._orient import axis_aligned_volume
from .errors import (
    BadMagic,
    MalformedHeader,
    TruncatedPayload,
    UnsupportedDatatype,
    UnsupportedFeature,
    VolumeIOError,
)

log = logging.getLogger(__name__)

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
GZIP_MAGIC = b"\x1f\x8b"

DT_UINT8 = 2
DT_FLOAT32 = 16
_DATATYPES = {DT_UINT8: U8, DT_FLOAT32: F32}
_MAX_INFLATE = 2 ** 31


def _quaternion_matrix(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])


def parse_nifti(data: bytes) -> Volume:
    try:
        return _parse_nifti(bytes(data))
    except VolumeIOError:
        raise
    except (ValueError, TypeError, OverflowError, IndexError, struct.error) as exc:
        raise MalformedHeader(str(exc)) from exc


def _inflate(data: bytes) -> bytes:
    dec = zlib.decompressobj(wbits=47)
    try:
        out = dec.decompress(data, _MAX_INFLATE)
    except zlib.error as exc:
        raise TruncatedPayload(f"corrupt gzip stream: {exc}") from exc
    if not dec.eof:
        raise TruncatedPayload("gzip stream ends early")
    return out


def _parse_nifti(data: bytes) -> Volume:
    if data[:2] == GZIP_MAGIC:
        data = _inflate(data)
    if len(data) < HEADER_SIZE:
        raise TruncatedPayload(f"file is {len(data)} bytes, shorter than the NIfTI-1 header")
    magic = data[344:348]
    if magic != MAGIC_SINGLE:
        if magic == MAGIC_PAIR:
            raise BadMagic("detached header/image pairs ('ni1') are not supported")
        raise BadMagic(f"bad magic {magic!r}")
    if struct.unpack_from("<i", data, 0)[0] == HEADER_SIZE:
        end = "<"
    elif struct.unpack_from(">i", data, 0)[0] == HEADER_SIZE:
        end = ">"
    else:
        raise MalformedHeader("sizeof_hdr is not 348")

    dim = struct.unpack_from(end + "8h", data, 40)
    datatype, bitpix = struct.unpack_from(end + "2h", data, 70)
    pixdim = struct.unpack_from(end + "8f", data, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(end + "3f", data, 108)
    qform_code, sform_code = struct.unpack_from(end + "2h", data, 252)
    quat = struct.unpack_from(end + "3f", data, 256)
    qoffset = struct.unpack_from(end + "3f", data, 268)
    srow = np.array(struct.unpack_from(end + "12f", data, 280), dtype=np.float64).reshape(3, 4)

    if dim[0] != 3:
        raise UnsupportedFeature(f"dim[0] = {dim[0]} (only 3D volumes supported)")
    sizes = [int(n) for n in dim[1:4]]
    if min(sizes) < 1:
        raise MalformedHeader(f"non-positive dims {sizes}")
    if datatype not in _DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} (only uint8 and float32)")
    dtype = _DATATYPES[datatype]
    if not np.isfinite(vox_offset) or vox_offset < VOX_OFFSET or vox_offset != int(vox_offset):
        raise MalformedHeader(f"vox_offset {vox_offset} is invalid for a single-file NIfTI")
    offset = int(vox_offset)
    nbytes = sizes[0] * sizes[1] * sizes[2] * dtype.itemsize
    payload = data[offset:offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, expected {nbytes}")
    arr = from_voxel_bytes(payload, sizes, dtype, big_endian=(end == ">"))

    if np.isfinite(scl_slope) and scl_slope != 0 and (scl_slope != 1 or scl_inter != 0):
        arr = (arr.astype(np.float64) * scl_slope + scl_inter).astype(np.float32)

    spacing = [abs(float(p)) if p else 1.0 for p in pixdim[1:4]]
    if qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        rot = _quaternion_matrix(*(float(q) for q in quat))
        axes = rot @ np.diag([spacing[0], spacing[1], qfac * spacing[2]])
        origin = [float(q) for q in qoffset]
    elif sform_code > 0:
        axes = srow[:, :3]
        origin = srow[:, 3].tolist()
    else:
        axes = np.diag(spacing)
        origin = [0.0, 0.0, 0.0]
    return axis_aligned_volume(arr, axes, origin)


def write_nifti(vol: Volume, gzip_output: bool = False) -> bytes:
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    datatype = DT_UINT8 if vol.dtype == U8 else DT_FLOAT32
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[39] = 0  # dim_info
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, vol.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, float(VOX_OFFSET), 0.0, 0.0)
    hdr[123] = 2  # xyzt_units: millimetres
    hdr[148:148 + 16] = b"skullrec".ljust(16, b"\x00")
    struct.pack_into("<2h", hdr, 252, 1, 1)
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    struct.pack_into("<12f", hdr, 280, sx, 0.0, 0.0, ox, 0.0, sy, 0.0, oy, 0.0, 0.0, sz, oz)
    hdr[344:348] = MAGIC_SINGLE
    out = bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + vol.voxel_bytes()
    if gzip_output:
        out = gzip.compress(out, compresslevel=6, mtime=0)
    return out
