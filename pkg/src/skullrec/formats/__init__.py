"""NRRD and NIfTI-1 codecs plus extension-based file dispatch."""
from __future__ import annotations

import os
from pathlib import Path

from ..volume import Volume
from .errors import (
    BadMagic,
    MalformedHeader,
    PayloadSizeMismatch,
    TruncatedPayload,
    UnsupportedDatatype,
    UnsupportedFeature,
    VolumeIOError,
)
from .nifti import parse_nifti, write_nifti
from .nrrd import parse_nrrd, write_nrrd

__all__ = [
    "BadMagic", "MalformedHeader", "PayloadSizeMismatch", "TruncatedPayload",
    "UnsupportedDatatype", "UnsupportedFeature", "VolumeIOError",
    "parse_nifti", "write_nifti", "parse_nrrd", "write_nrrd",
    "format_for_path", "load_volume", "save_volume", "atomic_write",
]

FORMATS = ("nrrd", "nii", "nii.gz")


def format_for_path(path) -> str:
    """``'nrrd'``, ``'nii'`` or ``'nii.gz'``; ValueError for anything else."""
    name = str(path).lower()
    if name.endswith(".nii.gz"):
        return "nii.gz"
    if name.endswith(".nii"):
        return "nii"
    if name.endswith(".nrrd"):
        return "nrrd"
    raise ValueError(f"unrecognized volume extension: {path}")


def load_volume(path, fmt: str | None = None) -> Volume:
    fmt = fmt or format_for_path(path)
    data = Path(path).read_bytes()
    if fmt == "nrrd":
        return parse_nrrd(data)
    return parse_nifti(data)


def encode_volume(vol: Volume, fmt: str, compress: bool | None = None) -> bytes:
    if fmt == "nrrd":
        return write_nrrd(vol, "gzip" if compress else "raw")
    if fmt in ("nii", "nii.gz"):
        return write_nifti(vol, gzip_output=(fmt == "nii.gz") if compress is None else compress)
    raise ValueError(f"unknown format {fmt!r}")


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_volume(path, vol: Volume, fmt: str | None = None, compress: bool | None = None) -> None:
    fmt = fmt or format_for_path(path)
    atomic_write(path, encode_volume(vol, fmt, compress))
