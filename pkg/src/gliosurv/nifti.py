"""Minimal single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Supported datatypes are uint8 (2), int16 (4) and float32 (16).  Spacing comes
from ``pixdim[1..3]`` and the origin from the sform translation when
``sform_code > 0``, otherwise from ``qoffset``.  Other orientation fields are
ignored on read and written as identity.
"""
from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .exceptions import FormatError, UnsupportedFormatError, ValidationError
from .volume import VALID_LABELS, IntensityVolume, LabelVolume

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352

DATATYPES = {2: np.dtype(np.uint8), 4: np.dtype(np.int16), 16: np.dtype(np.float32)}
DATATYPE_CODES = {v: k for k, v in DATATYPES.items()}

# (name, offset, struct format)
_FIELDS = {
    "sizeof_hdr": (0, "i"),
    "dim": (40, "8h"),
    "datatype": (70, "h"),
    "bitpix": (72, "h"),
    "pixdim": (76, "8f"),
    "vox_offset": (108, "f"),
    "scl_slope": (112, "f"),
    "scl_inter": (116, "f"),
    "qform_code": (252, "h"),
    "sform_code": (254, "h"),
    "quatern": (256, "3f"),
    "qoffset": (268, "3f"),
    "srow_x": (280, "4f"),
    "srow_y": (296, "4f"),
    "srow_z": (312, "4f"),
    "magic": (344, "4s"),
}


def _unpack(buf, endian, name):
    offset, fmt = _FIELDS[name]
    values = struct.unpack_from(endian + fmt, buf, offset)
    return values if len(values) > 1 else values[0]


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def parse_header(raw: bytes, source="<bytes>") -> dict:
    """Decode and validate the fields this reader relies on."""
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{source}: file shorter than the 348-byte header (sizeof_hdr)")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise FormatError(f"{source}: bad sizeof_hdr (expected 348)")

    hdr = {name: _unpack(raw, endian, name) for name in _FIELDS}
    hdr["endian"] = endian
    if hdr["magic"] != b"n+1\x00":
        raise FormatError(f"{source}: bad magic {hdr['magic']!r} (expected b'n+1\\x00')")
    dim = hdr["dim"]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{source}: bad dim[0]={ndim}")
    shape = list(dim[1 : ndim + 1])
    if any(d < 1 for d in shape):
        raise FormatError(f"{source}: bad dim {shape}")
    if any(d != 1 for d in shape[3:]):
        raise UnsupportedFormatError(f"{source}: only 3-D volumes are supported (dim={shape})")
    hdr["shape"] = tuple((shape + [1, 1, 1])[:3])
    code = hdr["datatype"]
    if code not in DATATYPES:
        raise UnsupportedFormatError(f"{source}: unsupported datatype code {code}")
    if hdr["bitpix"] != DATATYPES[code].itemsize * 8:
        raise FormatError(f"{source}: bitpix {hdr['bitpix']} inconsistent with datatype {code}")
    spacing = tuple(float(abs(p)) for p in hdr["pixdim"][1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing[:ndim]):
        raise FormatError(f"{source}: bad pixdim {hdr['pixdim'][1:4]}")
    hdr["spacing"] = tuple(s if s > 0 else 1.0 for s in spacing)
    vox_offset = hdr["vox_offset"]
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE or vox_offset != int(vox_offset):
        raise FormatError(f"{source}: bad vox_offset {vox_offset}")
    hdr["vox_offset"] = int(vox_offset)
    if hdr["sform_code"] > 0:
        hdr["origin"] = (hdr["srow_x"][3], hdr["srow_y"][3], hdr["srow_z"][3])
    else:
        hdr["origin"] = tuple(hdr["qoffset"])
    return hdr


def read_volume(path, kind: str = "auto"):
    """Load a NIfTI-1 file as a :class:`LabelVolume` or :class:`IntensityVolume`.

    ``kind="auto"`` returns a LabelVolume for integer data whose values are a
    subset of {0, 1, 2, 4}; ``"label"`` insists on that and raises a
    ValidationError listing offending values; ``"intensity"`` always returns
    an IntensityVolume.
    """
    if kind not in ("auto", "label", "intensity"):
        raise ValueError(f"kind must be auto, label or intensity, got {kind!r}")
    path = os.fspath(path)
    raw = _read_bytes(path)
    hdr = parse_header(raw, source=path)
    dtype = DATATYPES[hdr["datatype"]].newbyteorder(hdr["endian"])
    nvox = int(np.prod(hdr["shape"]))
    start = hdr["vox_offset"]
    stop = start + nvox * dtype.itemsize
    if len(raw) < stop:
        raise FormatError(f"{path}: payload truncated ({len(raw) - start} of {stop - start} bytes)")
    data = np.frombuffer(raw, dtype=dtype, count=nvox, offset=start)
    data = data.astype(dtype.newbyteorder("="), copy=True).reshape(hdr["shape"], order="F")

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if np.isfinite(slope) and slope != 0.0 and np.isfinite(inter) and (slope != 1.0 or inter != 0.0):
        data = data * float(slope) + float(inter)

    if kind == "intensity":
        return IntensityVolume(data, hdr["spacing"], hdr["origin"])
    is_integral = np.issubdtype(data.dtype, np.integer)
    bad = np.setdiff1d(np.unique(data), VALID_LABELS)
    if kind == "label":
        if bad.size or not is_integral and not np.all(data == np.round(data)):
            raise ValidationError(f"{path}: labels outside {{0,1,2,4}}: {bad.tolist()}")
        return LabelVolume(data.astype(np.uint8), hdr["spacing"], hdr["origin"])
    if is_integral and not bad.size:
        return LabelVolume(data.astype(np.uint8), hdr["spacing"], hdr["origin"])
    return IntensityVolume(data, hdr["spacing"], hdr["origin"])


def _choose_dtype(data: np.ndarray) -> np.dtype:
    if data.dtype in DATATYPE_CODES:
        return data.dtype
    if np.issubdtype(data.dtype, np.integer) or data.dtype == bool:
        lo, hi = (int(data.min()), int(data.max())) if data.size else (0, 0)
        if 0 <= lo and hi <= 255:
            return np.dtype(np.uint8)
        if -32768 <= lo and hi <= 32767:
            return np.dtype(np.int16)
    return np.dtype(np.float32)


def build_header(shape, spacing, origin, dtype) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, DATATYPE_CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(DEFAULT_VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<hh", hdr, 252, 1, 1)
    struct.pack_into("<3f", hdr, 268, *origin)
    sx, sy, sz = spacing
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, origin[0])
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, origin[1])
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, origin[2])
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    return bytes(hdr)


def write_volume(vol, path) -> None:
    """Write a volume; gzip-compressed (deterministically, mtime 0) when the name ends in ``.gz``."""
    path = os.fspath(path)
    data = np.asarray(vol.data)
    dtype = _choose_dtype(data)
    payload = np.asarray(data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    blob = build_header(vol.dims, vol.spacing, vol.origin, dtype) + b"\x00" * 4 + payload
    if path.endswith(".gz"):
        blob = gzip.compress(blob, compresslevel=6, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)
