"""Attached-header NRRD reader/writer for 3D uchar and float volumes."""
from __future__ import annotations

import gzip
import logging
import re
import zlib

import numpy as np

from ..volume import F32, U8, Volume, from_voxel_bytes
from ._orient import axis_aligned_volume
from .errors import (
    MalformedHeader,
    PayloadSizeMismatch,
    UnsupportedFeature,
    VolumeIOError,
)

log = logging.getLogger(__name__)

MAGIC = b"NRRD0004"
_MAGIC_RE = re.compile(rb"^NRRD000[1-5]$")

# Integer types that convert to float32 without loss.
_TYPES = {
    "uchar": U8, "unsigned char": U8, "uint8": U8, "uint8_t": U8,
    "float": F32,
    "signed char": np.dtype(np.int8), "int8": np.dtype(np.int8), "int8_t": np.dtype(np.int8),
    "short": np.dtype(np.int16), "short int": np.dtype(np.int16), "signed short": np.dtype(np.int16),
    "signed short int": np.dtype(np.int16), "int16": np.dtype(np.int16), "int16_t": np.dtype(np.int16),
    "ushort": np.dtype(np.uint16), "unsigned short": np.dtype(np.uint16),
    "unsigned short int": np.dtype(np.uint16), "uint16": np.dtype(np.uint16),
    "uint16_t": np.dtype(np.uint16),
}

_KNOWN_FIELDS = {
    "type", "dimension", "sizes", "encoding", "endian", "space", "space dimension",
    "space directions", "space origin", "spacings", "kinds", "content", "byte skip",
    "line skip", "data file", "datafile", "space units", "labels", "units", "centerings",
    "thicknesses", "axis mins", "axis maxs", "min", "max", "old min", "old max",
    "measurement frame", "sample units", "block size", "blocksize", "number",
}


def _vector(text: str, what: str) -> list[float]:
    inner = text.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise MalformedHeader(f"{what}: expected '(a,b,c)', got {text!r}")
    try:
        return [float(v) for v in inner[1:-1].split(",")]
    except ValueError as exc:
        raise MalformedHeader(f"{what}: non-numeric component in {text!r}") from exc


def _split_header(data: bytes) -> tuple[list[str], bytes]:
    if data[:4] != b"NRRD":
        raise MalformedHeader("missing NRRD magic")
    end = data.find(b"\n\n")
    end_crlf = data.find(b"\r\n\r\n")
    if end < 0 and end_crlf < 0:
        raise MalformedHeader("header terminator (blank line) not found")
    if end_crlf >= 0 and (end < 0 or end_crlf < end):
        head, payload = data[:end_crlf], data[end_crlf + 4:]
    else:
        head, payload = data[:end], data[end + 2:]
    try:
        text = head.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader("header is not ASCII") from exc
    lines = text.replace("\r\n", "\n").split("\n")
    if not _MAGIC_RE.match(lines[0].encode()):
        raise MalformedHeader(f"bad magic line {lines[0]!r}")
    return lines[1:], payload


def parse_header(data: bytes) -> tuple[dict, bytes]:
    lines, payload = _split_header(data)
    fields: dict[str, str] = {}
    for line in lines:
        if not line or line.startswith("#"):
            continue
        if ":=" in line.split(": ", 1)[0]:
            continue  # key/value pair
        if ": " not in line:
            raise MalformedHeader(f"unparseable header line {line!r}")
        key, value = line.split(": ", 1)
        key = key.strip().lower()
        if key not in _KNOWN_FIELDS:
            log.warning("ignoring unknown NRRD field %r", key)
        fields[key] = value.strip()
    return fields, payload


def parse_nrrd(data: bytes) -> Volume:
    try:
        return _parse_nrrd(bytes(data))
    except VolumeIOError:
        raise
    except (ValueError, TypeError, OverflowError, IndexError) as exc:
        raise MalformedHeader(str(exc)) from exc


def _parse_nrrd(data: bytes) -> Volume:
    fields, payload = parse_header(data)
    for required in ("type", "dimension", "sizes", "encoding"):
        if required not in fields:
            raise MalformedHeader(f"missing required field {required!r}")
    if "data file" in fields or "datafile" in fields:
        raise UnsupportedFeature("detached data files are not supported")
    try:
        dimension = int(fields["dimension"])
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric dimension {fields['dimension']!r}") from exc
    if dimension != 3:
        raise UnsupportedFeature(f"dimension {dimension} (only 3 supported)")
    try:
        sizes = [int(v) for v in fields["sizes"].split()]
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric sizes {fields['sizes']!r}") from exc
    if len(sizes) != 3 or min(sizes) < 1:
        raise MalformedHeader(f"sizes must be 3 positive integers, got {fields['sizes']!r}")
    type_name = " ".join(fields["type"].lower().split())
    if type_name not in _TYPES:
        raise UnsupportedFeature(f"unsupported type {fields['type']!r}")
    dtype = _TYPES[type_name]
    endian = fields.get("endian", "little").lower()
    if endian not in ("little", "big"):
        raise MalformedHeader(f"bad endian {endian!r}")

    expected = sizes[0] * sizes[1] * sizes[2] * dtype.itemsize
    encoding = fields["encoding"].lower()
    byte_skip = int(fields.get("byte skip", "0"))
    if encoding == "raw":
        if byte_skip == -1:
            payload = payload[len(payload) - expected:] if len(payload) >= expected else payload
        elif byte_skip > 0:
            payload = payload[byte_skip:]
    elif encoding in ("gzip", "gz"):
        try:
            dec = zlib.decompressobj(wbits=47)
            out = dec.decompress(payload, expected + 1)
        except zlib.error as exc:
            raise PayloadSizeMismatch(f"corrupt gzip payload: {exc}") from exc
        if byte_skip > 0:
            out = out[byte_skip:]
        payload = out
    else:
        raise UnsupportedFeature(f"unsupported encoding {encoding!r}")
    if len(payload) != expected:
        raise PayloadSizeMismatch(f"payload is {len(payload)} bytes, header implies {expected}")

    arr = from_voxel_bytes(payload, sizes, dtype, big_endian=(endian == "big"))
    if arr.dtype not in (U8, F32):
        arr = arr.astype(np.float32)

    if "space directions" in fields:
        vecs = re.findall(r"\([^)]*\)|none", fields["space directions"])
        vecs = [v for v in vecs if v != "none"]
        if len(vecs) != 3:
            raise MalformedHeader("space directions must list 3 vectors")
        cols = [_vector(v, "space directions") for v in vecs]
        if any(len(c) != 3 for c in cols):
            raise UnsupportedFeature("space dimension other than 3")
        axes = np.array(cols, dtype=np.float64).T
    elif "spacings" in fields:
        try:
            sp = [float(v) for v in fields["spacings"].split()]
        except ValueError as exc:
            raise MalformedHeader(f"non-numeric spacings {fields['spacings']!r}") from exc
        if len(sp) != 3:
            raise MalformedHeader("spacings must have 3 entries")
        sp = [1.0 if np.isnan(v) else v for v in sp]
        axes = np.diag(sp)
    else:
        axes = np.eye(3)
    origin = _vector(fields["space origin"], "space origin") if "space origin" in fields else [0.0] * 3
    if len(origin) != 3:
        raise UnsupportedFeature("space origin must have 3 components")
    return axis_aligned_volume(arr, axes, origin)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_nrrd(vol: Volume, encoding: str = "raw") -> bytes:
    if encoding not in ("raw", "gzip"):
        raise ValueError(f"encoding must be 'raw' or 'gzip', got {encoding!r}")
    sx, sy, sz = vol.spacing
    header = [
        MAGIC.decode(),
        "# written by skullrec",
        f"type: {'uchar' if vol.dtype == U8 else 'float'}",
        "dimension: 3",
        "space dimension: 3",
        "sizes: " + " ".join(str(n) for n in vol.dims),
        f"space directions: ({_fmt(sx)},0,0) (0,{_fmt(sy)},0) (0,0,{_fmt(sz)})",
        "space origin: (" + ",".join(_fmt(o) for o in vol.origin) + ")",
        "endian: little",
        f"encoding: {encoding}",
    ]
    payload = vol.voxel_bytes()
    if encoding == "gzip":
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    return ("\n".join(header) + "\n\n").encode("ascii") + payload
