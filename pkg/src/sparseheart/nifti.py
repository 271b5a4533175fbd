"""Minimal uncompressed little-endian NIfTI-1 single-file (.nii) I/O.

Hard label volumes are stored as uint8 with the voxel value equal to the
channel index; soft / one-hot volumes and vector fields are stored as 4D
float32, channel-last. The sform matrix carries grid origin, spacing and
axes; the qform is left unset.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import NiftiFormatError
from .grids import Grid3, LabelVolume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8 = 2
DT_FLOAT32 = 16

NIFTI_XFORM_SCANNER_ANAT = 1

_DTYPES = {DT_UINT8: np.uint8, DT_FLOAT32: np.float32}
_BITPIX = {DT_UINT8: 8, DT_FLOAT32: 32}


def _sform_rows(grid: Grid3) -> np.ndarray:
    """4x4 voxel-index -> mm affine for ``grid`` (node-centered)."""
    mat = np.eye(4)
    mat[:3, :3] = grid.axes_matrix * grid.spacing_vec
    mat[:3, 3] = grid.origin_vec
    return mat


def _grid_from_sform(sform: np.ndarray, dims) -> Grid3:
    lin = sform[:3, :3]
    spacing = np.linalg.norm(lin, axis=0)
    if np.any(spacing <= 0):
        raise NiftiFormatError("sform has a zero-length column")
    axes = lin / spacing
    return Grid3(
        dims=tuple(int(d) for d in dims),
        spacing=tuple(spacing),
        origin=tuple(sform[:3, 3]),
        axes=tuple(map(tuple, axes)),
    )


def write_array(path, array: np.ndarray, grid: Grid3 | None = None,
                spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a 2D/3D/4D array as .nii; 4D arrays are channel-last float32."""
    array = np.asarray(array)
    if array.dtype == np.uint8:
        datatype = DT_UINT8
    else:
        array = array.astype(np.float32)
        datatype = DT_FLOAT32
    if array.ndim not in (2, 3, 4):
        raise ValueError(f"unsupported array rank {array.ndim}")

    shape3 = (array.shape + (1, 1, 1))[:3]
    nchan = array.shape[3] if array.ndim == 4 else 1
    ndim = 4 if array.ndim == 4 else array.ndim

    if grid is None:
        sform = np.eye(4)
        sform[0, 0], sform[1, 1], sform[2, 2] = (
            list(spacing) + [1.0, 1.0]
        )[:3]
        pixdim = (list(spacing) + [1.0, 1.0])[:3]
    else:
        sform = _sform_rows(grid)
        pixdim = grid.spacing

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)           # sizeof_hdr
    dim = [ndim, shape3[0], shape3[1], shape3[2], nchan, 1, 1, 1]
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, _BITPIX[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))   # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                 # scl_slope
    struct.pack_into("<h", hdr, 252, 0)                   # qform_code
    struct.pack_into("<h", hdr, 254, NIFTI_XFORM_SCANNER_ANAT)
    struct.pack_into("<4f", hdr, 280, *sform[0])          # srow_x
    struct.pack_into("<4f", hdr, 296, *sform[1])
    struct.pack_into("<4f", hdr, 312, *sform[2])
    hdr[344:348] = MAGIC

    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        # NIfTI data is Fortran-ordered with x fastest
        f.write(np.asfortranarray(array).tobytes(order="F"))


def read_array(path) -> tuple[np.ndarray, Grid3]:
    """Read a .nii written by :func:`write_array`; returns (array, grid)."""
    raw = Path(path).read_bytes()
    if len(raw) < VOX_OFFSET:
        raise NiftiFormatError(f"{path}: file shorter than a NIfTI-1 header")
    if raw[344:348] != MAGIC:
        raise NiftiFormatError(f"{path}: magic is not 'n+1'")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiFormatError(f"{path}: not little-endian NIfTI-1")
    dim = struct.unpack_from("<8h", raw, 40)
    datatype, = struct.unpack_from("<h", raw, 70)
    if datatype not in _DTYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype {datatype}")
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    vox_offset = int(vox_offset)
    ndim = dim[0]
    shape = tuple(max(1, d) for d in dim[1:1 + max(ndim, 3)])
    sform_code, = struct.unpack_from("<h", raw, 254)
    sform = np.eye(4)
    sform[0, :] = struct.unpack_from("<4f", raw, 280)
    sform[1, :] = struct.unpack_from("<4f", raw, 296)
    sform[2, :] = struct.unpack_from("<4f", raw, 312)
    if sform_code == 0:
        pixdim = struct.unpack_from("<8f", raw, 76)[1:4]
        sform = np.diag(list(pixdim) + [1.0])
    count = int(np.prod(shape))
    nbytes = count * np.dtype(_DTYPES[datatype]).itemsize
    if len(raw) < vox_offset + nbytes:
        raise NiftiFormatError(f"{path}: data section truncated")
    arr = np.frombuffer(raw, dtype=_DTYPES[datatype], count=count, offset=vox_offset)
    arr = arr.reshape(shape, order="F")
    if ndim < 3:
        grid_dims = shape[:2] + (1,)
    else:
        grid_dims = shape[:3]
    grid = _grid_from_sform(sform, grid_dims)
    if ndim == 2:
        arr = arr.reshape(shape[:2], order="F")
    return np.ascontiguousarray(arr), grid


def write_label_volume(path, vol: LabelVolume, hard: bool = True) -> None:
    """Hard volumes go out as uint8 channel indices, soft as 4D float32."""
    if hard:
        write_array(path, vol.labels(), grid=vol.grid)
    else:
        write_array(path, vol.data, grid=vol.grid)


def read_label_volume(path, channels: int | None = None) -> LabelVolume:
    arr, grid = read_array(path)
    if arr.ndim == 4:
        return LabelVolume(grid, arr)
    if arr.ndim != 3:
        raise NiftiFormatError(f"{path}: expected a 3D or 4D label volume")
    if channels is None:
        channels = int(arr.max()) + 1 if arr.size else 1
        channels = max(channels, 2)
    return LabelVolume.from_labels(grid, arr, channels)


def write_vector_field(path, field: np.ndarray, grid: Grid3) -> None:
    """3-component mm field as 4D float32, channel-last."""
    field = np.asarray(field, np.float32)
    if field.ndim != 4 or field.shape[3] != 3:
        raise ValueError("vector field must have shape dims + (3,)")
    write_array(path, field, grid=grid)


def read_vector_field(path) -> tuple[np.ndarray, Grid3]:
    arr, grid = read_array(path)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise NiftiFormatError(f"{path}: expected a 3-component vector field")
    return arr, grid
