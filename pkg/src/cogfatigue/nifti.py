"""Minimal NIfTI-1 reader/writer for 4D scans.

Supports the subset this package needs: single-file ``.nii`` (optionally
gzipped), little-endian, 348-byte header, 4D float32 or int16 data.  On
disk NIfTI stores voxels x-fastest with ``dim = [4, nx, ny, nz, nt]``; that
byte order is exactly a C-contiguous ``(t, z, y, x)`` array, which is how
:class:`~cogfatigue.volume.VolumeSeries` holds it in memory.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .volume import VolumeSeries

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension flag
_MAGIC = b"n+1\x00"

_DT_FLOAT32 = 16
_DT_INT16 = 4
_XYZT_MM_SEC = 2 | 8  # spatial units mm, temporal units s

_SPACE_FACTORS = {0: 1.0, 1: 1000.0, 2: 1.0, 3: 0.001}  # to mm
_TIME_FACTORS = {0: 1.0, 8: 1.0, 16: 1e-3, 24: 1e-6}  # to seconds


def _open_for_read(path: Path):
    with open(path, "rb") as fh:
        gzipped = fh.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gzipped else open(path, "rb")


def _build_header(vs: VolumeSeries) -> bytes:
    t, z, y, x = vs.data.shape
    dz, dy, dx = vs.voxel_dims_mm
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    buf[38:39] = b"r"
    struct.pack_into("<8h", buf, 40, 4, x, y, z, t, 1, 1, 1)
    struct.pack_into("<h", buf, 70, _DT_FLOAT32)
    struct.pack_into("<h", buf, 72, 32)  # bitpix
    struct.pack_into("<8f", buf, 76, 1.0, dx, dy, dz, vs.tr_seconds, 0.0, 0.0, 0.0)
    struct.pack_into("<f", buf, 108, float(VOX_OFFSET))
    struct.pack_into("<f", buf, 112, 1.0)  # scl_slope
    buf[123] = _XYZT_MM_SEC
    struct.pack_into("<80s", buf, 148, b"cogfatigue")
    struct.pack_into("<h", buf, 254, 1)  # sform_code
    struct.pack_into("<4f", buf, 280, *vs.affine[0])
    struct.pack_into("<4f", buf, 296, *vs.affine[1])
    struct.pack_into("<4f", buf, 312, *vs.affine[2])
    buf[344:348] = _MAGIC
    return bytes(buf)


def save_nifti(vs: VolumeSeries, path: str | Path) -> None:
    """Write ``vs`` as a single-file NIfTI-1 volume (gzipped iff ``*.gz``).

    The voxel data is stored as little-endian float32, so a subsequent
    :func:`load_nifti` reproduces it bit-exactly.
    """
    path = Path(path)
    payload = (
        _build_header(vs)
        + b"\x00" * (VOX_OFFSET - HEADER_SIZE)
        + np.ascontiguousarray(vs.data, dtype="<f4").tobytes()
    )
    if path.suffix == ".gz":
        # mtime pinned (and no embedded name) so equal volumes give equal bytes
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as fh:
        fh.write(payload)


def read_header(path: str | Path) -> dict:
    """Parse and validate the 348-byte header; no voxel data is read."""
    path = Path(path)
    with _open_for_read(path) as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than a NIfTI-1 header")
    if raw[344:348] not in (_MAGIC, b"ni1\x00"):
        raise FormatError(f"{path}: NIfTI-1 magic 'n+1' absent")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise FormatError(f"{path}: sizeof_hdr={sizeof_hdr}; only little-endian NIfTI-1 is supported")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)
    units = raw[123]
    (sform_code,) = struct.unpack_from("<h", raw, 254)
    srows = [struct.unpack_from("<4f", raw, off) for off in (280, 296, 312)]
    return {
        "path": path,
        "dim": dim,
        "datatype": datatype,
        "pixdim": pixdim,
        "vox_offset": int(vox_offset),
        "scl_slope": slope,
        "scl_inter": inter,
        "xyzt_units": units,
        "sform_code": sform_code,
        "srows": srows,
    }


def _check_4d(hdr: dict) -> tuple[int, int, int, int]:
    dim = hdr["dim"]
    if dim[0] != 4:
        raise ShapeError(f"{hdr['path']}: expected 4D data, header says {dim[0]}D")
    x, y, z, t = dim[1:5]
    if min(x, y, z, t) < 1:
        raise ShapeError(f"{hdr['path']}: non-positive dimension in {dim[1:5]}")
    return x, y, z, t


def load_nifti(path: str | Path) -> VolumeSeries:
    """Read a 4D NIfTI-1 file into a float32 ``(t, z, y, x)`` series.

    Raises :class:`FormatError` for bad magic / unsupported encodings,
    :class:`ShapeError` for non-4D files, and :class:`ValidationError`
    (naming the voxel count) when the data contains NaN or Inf.
    """
    path = Path(path)
    hdr = read_header(path)
    x, y, z, t = _check_4d(hdr)
    if hdr["datatype"] == _DT_FLOAT32:
        disk_dtype = np.dtype("<f4")
    elif hdr["datatype"] == _DT_INT16:
        disk_dtype = np.dtype("<i2")
    else:
        raise FormatError(f"{path}: unsupported datatype code {hdr['datatype']}")

    n_vox = x * y * z * t
    offset = max(hdr["vox_offset"], VOX_OFFSET)
    with _open_for_read(path) as fh:
        fh.seek(offset)
        payload = fh.read(n_vox * disk_dtype.itemsize)
    if len(payload) != n_vox * disk_dtype.itemsize:
        raise FormatError(f"{path}: truncated voxel data")

    data = np.frombuffer(payload, dtype=disk_dtype).reshape(t, z, y, x)
    data = data.astype(np.float32)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope == 0.0:
            slope = 1.0
        data = (data * np.float32(slope) + np.float32(inter)).astype(np.float32)

    space = _SPACE_FACTORS.get(hdr["xyzt_units"] & 0x07, 1.0)
    time = _TIME_FACTORS.get(hdr["xyzt_units"] & 0x38, 1.0)
    pixdim = hdr["pixdim"]
    dx, dy, dz = (abs(p) * space if p != 0 else 1.0 for p in pixdim[1:4])
    tr = abs(pixdim[4]) * time if pixdim[4] != 0 else 1.0

    if hdr["sform_code"] > 0:
        affine = np.array(hdr["srows"] + [(0.0, 0.0, 0.0, 1.0)], dtype=np.float64)
    else:
        affine = np.diag([dx, dy, dz, 1.0])

    vs = VolumeSeries(data=data, voxel_dims_mm=(dz, dy, dx), tr_seconds=tr, affine=affine)
    vs.check_finite()
    return vs
