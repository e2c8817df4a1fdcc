import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import mutated_headers, volumes
from skullrec.formats import encode_volume, format_for_path, load_volume, save_volume
from skullrec.formats.errors import (
    BadMagic,
    MalformedHeader,
    PayloadSizeMismatch,
    TruncatedPayload,
    UnsupportedDatatype,
    UnsupportedFeature,
    VolumeIOError,
)
from skullrec.formats.nifti import parse_nifti, write_nifti
from skullrec.formats.nrrd import parse_nrrd, write_nrrd
from skullrec.volume import Volume, binarize


def nrrd_fixture(payload: bytes, encoding="raw", extra="") -> bytes:
    head = f"NRRD0004\ntype: uchar\ndimension: 3\nsizes: 2 2 2\nencoding: {encoding}\n{extra}\n"
    return head.encode() + payload


def nifti_header(dims=(2, 2, 2), datatype=2, bitpix=8, vox_offset=352.0, magic=b"n+1\x00",
                 pixdim=(1.0, 1.0, 1.0, 1.0), endian="<") -> bytearray:
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    struct.pack_into(endian + "8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    struct.pack_into(endian + "2h", hdr, 70, datatype, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, *pixdim, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    hdr[344:348] = magic
    return hdr


# -- NRRD -------------------------------------------------------------------

def test_nrrd_raw_fixture():
    vol = parse_nrrd(nrrd_fixture(bytes(range(8))))
    assert vol.dims == (2, 2, 2)
    assert vol.voxel_bytes() == bytes(range(8))
    # x fastest: byte 1 is voxel (1, 0, 0), byte 2 is (0, 1, 0), byte 4 is (0, 0, 1)
    assert vol.data[1, 0, 0] == 1 and vol.data[0, 1, 0] == 2 and vol.data[0, 0, 1] == 4
    assert vol.spacing == (1.0, 1.0, 1.0) and vol.origin == (0.0, 0.0, 0.0)


def test_nrrd_gzip_fixture_matches_raw():
    raw = parse_nrrd(nrrd_fixture(bytes(range(8))))
    gz = parse_nrrd(nrrd_fixture(gzip.compress(bytes(range(8))), "gzip"))
    assert gz == raw


def test_nrrd_short_payload():
    with pytest.raises(PayloadSizeMismatch):
        parse_nrrd(nrrd_fixture(bytes(range(7))))


def test_nrrd_long_payload():
    with pytest.raises(PayloadSizeMismatch):
        parse_nrrd(nrrd_fixture(bytes(range(9))))


def test_nrrd_big_endian_float():
    vals = np.arange(8, dtype=">f4")
    data = (b"NRRD0004\ntype: float\ndimension: 3\nsizes: 2 2 2\nendian: big\nencoding: raw\n\n"
            + vals.tobytes())
    vol = parse_nrrd(data)
    assert vol.dtype == np.float32
    np.testing.assert_array_equal(vol.data.ravel(order="F"), np.arange(8, dtype=np.float32))


def test_nrrd_spacing_and_origin():
    extra = "space directions: (0.5,0,0) (0,2,0) (0,0,3)\nspace origin: (1,-2,3.5)\n"
    vol = parse_nrrd(nrrd_fixture(bytes(8), extra=extra))
    assert vol.spacing == (0.5, 2.0, 3.0)
    assert vol.origin == (1.0, -2.0, 3.5)


def test_nrrd_spacings_field():
    vol = parse_nrrd(nrrd_fixture(bytes(8), extra="spacings: 0.7 0.8 0.9\n"))
    assert vol.spacing == (0.7, 0.8, 0.9)


def test_nrrd_negative_direction_flips_axis():
    extra = "space directions: (-2,0,0) (0,1,0) (0,0,1)\nspace origin: (10,0,0)\n"
    vol = parse_nrrd(nrrd_fixture(bytes(range(8)), extra=extra))
    assert vol.spacing[0] == 2.0
    assert vol.origin[0] == 8.0
    assert vol.data[0, 0, 0] == 1 and vol.data[1, 0, 0] == 0


def test_nrrd_off_diagonal_rejected():
    extra = "space directions: (1,0.5,0) (0,1,0) (0,0,1)\n"
    with pytest.raises(UnsupportedFeature):
        parse_nrrd(nrrd_fixture(bytes(8), extra=extra))


@pytest.mark.parametrize("header, error", [
    ("NRRD0004\ntype: uchar\ndimension: 2\nsizes: 2 4\nencoding: raw\n\n", UnsupportedFeature),
    ("NRRD0004\ntype: uchar\ndimension: 3\nsizes: 2 2 2\nencoding: bzip2\n\n", UnsupportedFeature),
    ("NRRD0004\ntype: uchar\ndimension: 3\nsizes: 2 two 2\nencoding: raw\n\n", MalformedHeader),
    ("NRRD0004\ntype: uchar\ndimension: 3\nencoding: raw\n\n", MalformedHeader),
    ("NRRD0004\ntype: uchar\ndimension: 3\nsizes: 2 2 2\nencoding: raw\ndata file: x.raw\n\n", UnsupportedFeature),
    ("NRRD0009\ntype: uchar\ndimension: 3\nsizes: 2 2 2\nencoding: raw\n\n", MalformedHeader),
    ("NRRD0004\ntype: double\ndimension: 3\nsizes: 2 2 2\nencoding: raw\n\n", UnsupportedFeature),
])
def test_nrrd_header_errors(header, error):
    with pytest.raises(error):
        parse_nrrd(header.encode() + bytes(8))


def test_nrrd_unknown_field_warns(caplog):
    vol = parse_nrrd(nrrd_fixture(bytes(8), extra="my private field: 42\n"))
    assert vol.dims == (2, 2, 2)
    assert "my private field" in caplog.text


def test_nrrd_comments_and_crlf():
    data = (b"NRRD0004\r\n# a comment\r\ntype: uchar\r\ndimension: 3\r\nsizes: 2 2 2\r\n"
            b"encoding: raw\r\nkey:=value\r\n\r\n" + bytes(range(8)))
    assert parse_nrrd(data).voxel_bytes() == bytes(range(8))


def test_nrrd_writer_fields():
    vol = Volume(np.ones((1, 1, 1), np.uint8))
    out = write_nrrd(vol)
    head = out.split(b"\n\n")[0].decode()
    assert head.startswith("NRRD0004\n")
    for key in ("type:", "dimension:", "sizes:", "encoding:", "space directions:", "space origin:"):
        assert key in head
    assert parse_nrrd(out).data.tolist() == [[[1]]]


def test_nrrd_gzip_and_raw_agree():
    vol = Volume(np.arange(24, dtype=np.float32).reshape(2, 3, 4), (0.5, 1, 2), (1, 2, 3))
    assert parse_nrrd(write_nrrd(vol, "gzip")) == parse_nrrd(write_nrrd(vol, "raw")) == vol


def test_nrrd_signed_types_convert_to_float():
    vals = np.array([-3, 0, 5, 7, -1, 2, 9, 100], dtype="<i2")
    data = b"NRRD0004\ntype: short\ndimension: 3\nsizes: 2 2 2\nencoding: raw\n\n" + vals.tobytes()
    vol = parse_nrrd(data)
    assert vol.dtype == np.float32
    np.testing.assert_array_equal(vol.data.ravel(order="F"), vals.astype(np.float32))


# -- NIfTI ------------------------------------------------------------------

def test_nifti_fixture():
    data = bytes(nifti_header()) + b"\x00" * 4 + bytes(range(8))
    vol = parse_nifti(data)
    assert vol.dims == (2, 2, 2)
    assert vol.voxel_bytes() == bytes(range(8))


def test_nifti_gzip_fixture():
    data = bytes(nifti_header()) + b"\x00" * 4 + bytes(range(8))
    assert parse_nifti(gzip.compress(data)) == parse_nifti(data)


def test_nifti_big_endian_fixture():
    hdr = nifti_header(datatype=16, bitpix=32, endian=">", pixdim=(1, 0.5, 0.6, 0.7))
    data = bytes(hdr) + b"\x00" * 4 + np.arange(8, dtype=">f4").tobytes()
    vol = parse_nifti(data)
    np.testing.assert_array_equal(vol.data.ravel(order="F"), np.arange(8, dtype=np.float32))
    assert vol.spacing == tuple(float(np.float32(v)) for v in (0.5, 0.6, 0.7))


def test_nifti_pair_magic_rejected():
    data = bytes(nifti_header(magic=b"ni1\x00")) + b"\x00" * 4 + bytes(8)
    with pytest.raises(BadMagic):
        parse_nifti(data)


def test_nifti_bad_datatype():
    data = bytes(nifti_header(datatype=4, bitpix=16)) + b"\x00" * 4 + bytes(16)
    with pytest.raises(UnsupportedDatatype):
        parse_nifti(data)


def test_nifti_truncated():
    data = bytes(nifti_header()) + b"\x00" * 4 + bytes(7)
    with pytest.raises(TruncatedPayload):
        parse_nifti(data)
    with pytest.raises(TruncatedPayload):
        parse_nifti(data[:100])


def test_nifti_4d_rejected():
    hdr = nifti_header()
    struct.pack_into("<h", hdr, 40, 4)
    with pytest.raises(UnsupportedFeature):
        parse_nifti(bytes(hdr) + bytes(12))


def test_nifti_scaling_applied():
    hdr = nifti_header()
    struct.pack_into("<2f", hdr, 112, 2.0, -1.0)
    vol = parse_nifti(bytes(hdr) + b"\x00" * 4 + bytes(range(8)))
    assert vol.dtype == np.float32
    np.testing.assert_array_equal(vol.data.ravel(order="F"), np.arange(8) * 2.0 - 1.0)


def test_nifti_sform_used_without_qform():
    hdr = nifti_header(pixdim=(1, 9, 9, 9))
    struct.pack_into("<2h", hdr, 252, 0, 1)
    struct.pack_into("<12f", hdr, 280, 2, 0, 0, 5, 0, 3, 0, 6, 0, 0, 4, 7)
    vol = parse_nifti(bytes(hdr) + b"\x00" * 4 + bytes(8))
    assert vol.spacing == (2.0, 3.0, 4.0) and vol.origin == (5.0, 6.0, 7.0)


def test_nifti_rotated_qform_rejected():
    hdr = nifti_header()
    struct.pack_into("<h", hdr, 252, 1)
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, np.sin(np.radians(15)))
    with pytest.raises(UnsupportedFeature):
        parse_nifti(bytes(hdr) + b"\x00" * 4 + bytes(8))


def test_nifti_writer_header():
    vol = Volume(np.zeros((3, 4, 5), np.uint8), (0.5, 0.25, 2.0), (1.0, -2.0, 3.0))
    out = write_nifti(vol)
    assert struct.unpack_from("<i", out, 0)[0] == 348
    assert out[344:348] == b"n+1\x00"
    assert struct.unpack_from("<f", out, 108)[0] == 352.0
    assert len(out) == 352 + 60
    assert write_nifti(vol, gzip_output=True)[:2] == b"\x1f\x8b"


def test_nrrd_to_nifti_conversion_preserves_voxels():
    nrrd_vol = parse_nrrd(nrrd_fixture(bytes(range(8)), extra="spacings: 0.5 1 2\n"))
    nifti_vol = parse_nifti(write_nifti(nrrd_vol, gzip_output=True))
    assert nifti_vol.voxel_bytes() == nrrd_vol.voxel_bytes()
    assert nifti_vol == nrrd_vol


# -- properties -------------------------------------------------------------

@settings(max_examples=60)
@given(volumes())
def test_roundtrip_nrrd(vol):
    assert parse_nrrd(write_nrrd(vol, "raw")) == vol
    assert parse_nrrd(write_nrrd(vol, "gzip")) == vol


@settings(max_examples=60)
@given(volumes())
def test_roundtrip_nifti(vol):
    assert parse_nifti(write_nifti(vol)) == vol
    assert parse_nifti(write_nifti(vol, gzip_output=True)) == vol


@settings(max_examples=40)
@given(volumes())
def test_cross_format_roundtrip(vol):
    back = parse_nrrd(write_nrrd(parse_nifti(write_nifti(vol, True))))
    assert back.voxel_bytes() == vol.voxel_bytes()
    assert back.spacing == vol.spacing and back.origin == vol.origin


@settings(max_examples=300)
@given(st.binary(max_size=600))
def test_arbitrary_bytes_never_crash(blob):
    for parser in (parse_nrrd, parse_nifti):
        try:
            parser(blob)
        except VolumeIOError:
            pass
    for prefix in (b"NRRD0004\n", b"\x1f\x8b"):
        try:
            parse_nrrd(prefix + blob) if prefix.startswith(b"NRRD") else parse_nifti(prefix + blob)
        except VolumeIOError:
            pass


def test_mutated_headers_never_crash():
    outcomes = {"ok": 0, "error": 0}
    for fmt, blob in mutated_headers(300, seed=1):
        parser = parse_nrrd if fmt == "nrrd" else parse_nifti
        try:
            parser(blob)
            outcomes["ok"] += 1
        except VolumeIOError:
            outcomes["error"] += 1
    assert outcomes["error"] > 50  # the mutator actually breaks things


# -- binarize and path helpers -------------------------------------------------

def test_binarize_examples():
    zero = Volume(np.zeros((2, 2, 2), np.float32))
    assert binarize(zero).count() == 0
    vals = Volume(np.array([0.0, 0.4, 0.6, 1.0], np.float32).reshape(4, 1, 1), (2, 2, 2), (1, 1, 1))
    out = binarize(vals, 0.5)
    assert out.data.ravel().tolist() == [0, 0, 1, 1]
    assert out.dtype == np.uint8 and out.spacing == vals.spacing and out.origin == vals.origin
    mask = Volume((np.arange(8).reshape(2, 2, 2) % 2).astype(np.uint8))
    assert binarize(mask) == mask


def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2), np.float64))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2), np.uint8), spacing=(1, 0, 1))
    vol = Volume(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1


@pytest.mark.parametrize("name, fmt", [("a.nrrd", "nrrd"), ("a.NII", "nii"), ("dir/a.nii.gz", "nii.gz")])
def test_format_for_path(name, fmt):
    assert format_for_path(name) == fmt


def test_format_for_path_rejects_unknown():
    with pytest.raises(ValueError):
        format_for_path("a.mha")


@pytest.mark.parametrize("name", ["v.nrrd", "v.nii", "v.nii.gz"])
def test_save_load(tmp_path, name):
    vol = Volume(np.arange(60, dtype=np.float32).reshape(3, 4, 5), (0.5, 1.5, 2.5), (-1, 0, 1))
    save_volume(tmp_path / name, vol)
    assert load_volume(tmp_path / name) == vol
    assert not list(tmp_path.glob("*.tmp"))


def test_encode_is_deterministic():
    vol = Volume(np.arange(60, dtype=np.uint8).reshape(3, 4, 5))
    for fmt in ("nrrd", "nii", "nii.gz"):
        assert encode_volume(vol, fmt, True) == encode_volume(vol, fmt, True)
