"""Volumetric data model and on-disk formats.

A Volume is a 3D scalar grid stored x-fastest (Fortran order), so the
linear index of voxel (x, y, z) is ``x + nx*(y + ny*z)``. Supported file
formats:

* uncompressed single-file NIfTI-1 (``.nii``) — no ``.hdr/.img`` pairs,
  no gzip;
* a raw fallback: ``<name>.f32raw`` (little-endian float32, x-fastest)
  next to ``<name>.json`` holding ``{"dims": [...], "voxel_size": [...]}``.

Affine/orientation header fields are read past but never interpreted;
analysis is purely voxel-grid based.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatchError,
    EmptyMaskError,
    MalformedHeaderError,
    NonFiniteVoxelError,
    TruncatedDataError,
    UnsupportedDatatypeError,
)

HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte extension flag

# NIfTI-1 datatype codes we accept.
_DTYPE_BY_CODE = {
    2: ("uint8", np.uint8),
    4: ("int16", np.int16),
    8: ("int32", np.int32),
    16: ("float32", np.float32),
    64: ("float64", np.float64),
}
_BITPIX_BY_CODE = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64}
_MAGICS = (b"n+1\x00", b"ni1\x00")

RAW_SUFFIX = ".f32raw"


def linear_index(dims, x, y, z):
    """Map voxel coordinates to the x-fastest linear index."""
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def coords_from_linear(dims, idx):
    """Inverse of :func:`linear_index`."""
    nx, ny, _ = dims
    x = idx % nx
    y = (idx // nx) % ny
    z = idx // (nx * ny)
    return (x, y, z)


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar grid with voxel spacing metadata.

    ``data`` is held as float64 in Fortran order and is read-only after
    construction, so Volumes are safe to share across workers.
    """

    dims: tuple
    voxel_size: tuple
    data: np.ndarray
    datatype_origin: str = "float64"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise DimMismatchError(f"dims must be three positive counts, got {self.dims}")
        arr = np.asfortranarray(np.asarray(self.data, dtype=np.float64))
        if arr.shape != dims:
            if arr.size != dims[0] * dims[1] * dims[2]:
                raise DimMismatchError(
                    f"data size {arr.size} does not match dims {dims}"
                )
            arr = arr.reshape(dims, order="F")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteVoxelError("volume contains NaN or infinite voxels")
        if self.datatype_origin not in {code[0] for code in _DTYPE_BY_CODE.values()}:
            raise ValueError(f"unknown datatype_origin {self.datatype_origin!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "data", arr)

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    def flat(self):
        """Voxel values in x-fastest linear-index order."""
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean in/out grid; at least one voxel must be inside."""

    dims: tuple
    inside: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        arr = np.asfortranarray(np.asarray(self.inside, dtype=bool))
        if arr.shape != dims:
            raise DimMismatchError(
                f"mask shape {arr.shape} does not match dims {dims}"
            )
        if not arr.any():
            raise EmptyMaskError("mask has no inside voxels")
        arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "inside", arr)

    @property
    def n_inside(self):
        return int(self.inside.sum())

    def flat_indices(self):
        """Linear indices (x-fastest) of the inside voxels, ascending."""
        return np.flatnonzero(self.inside.ravel(order="F"))


def full_mask(dims):
    """Mask covering the whole grid."""
    return Mask(dims=tuple(dims), inside=np.ones(tuple(dims), dtype=bool, order="F"))


@dataclass(frozen=True, eq=False)
class SubjectStack:
    """N aligned subject volumes plus a common analysis mask.

    The in-mask data matrix (subjects x voxels) is precomputed once and
    reused by every permutation realization.
    """

    subjects: tuple
    mask: Mask

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if len(subjects) < 2:
            raise ValueError(f"need at least 2 subjects, got {len(subjects)}")
        dims = subjects[0].dims
        for i, vol in enumerate(subjects):
            if vol.dims != dims:
                raise DimMismatchError(
                    f"subject {i} dims {vol.dims} differ from {dims}"
                )
        if self.mask.dims != dims:
            raise DimMismatchError(
                f"mask dims {self.mask.dims} differ from subject dims {dims}"
            )
        inmask = self.mask.flat_indices()
        matrix = np.empty((len(subjects), inmask.size), dtype=np.float64)
        for i, vol in enumerate(subjects):
            matrix[i] = vol.flat()[inmask]
        matrix.setflags(write=False)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "_inmask_flat", inmask)
        object.__setattr__(self, "_matrix", matrix)

    @property
    def n_subjects(self):
        return len(self.subjects)

    @property
    def dims(self):
        return self.subjects[0].dims

    @property
    def voxel_size(self):
        return self.subjects[0].voxel_size

    @property
    def inmask_indices(self):
        """Linear indices of in-mask voxels (ascending)."""
        return self._inmask_flat

    @property
    def data_matrix(self):
        """(N, n_inmask) float64 view of the in-mask subject data."""
        return self._matrix

    def negated(self):
        """Stack with every subject volume negated (for lower-tail runs)."""
        flipped = tuple(
            Volume(v.dims, v.voxel_size, -v.data, v.datatype_origin)
            for v in self.subjects
        )
        return SubjectStack(subjects=flipped, mask=self.mask)


def stack_from_arrays(arrays, mask=None, voxel_size=(1.0, 1.0, 1.0)):
    """Build a SubjectStack from an (N, nx, ny, nz) array or list of 3D arrays."""
    arrs = [np.asarray(a, dtype=np.float64) for a in arrays]
    vols = tuple(Volume(a.shape, voxel_size, a) for a in arrs)
    if mask is None:
        m = full_mask(vols[0].dims)
    elif isinstance(mask, Mask):
        m = mask
    else:
        m = Mask(dims=np.asarray(mask).shape, inside=np.asarray(mask, dtype=bool))
    return SubjectStack(subjects=vols, mask=m)


# ---------------------------------------------------------------------------
# NIfTI-1 read/write
# ---------------------------------------------------------------------------

def _detect_byteorder(raw):
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError(
            f"file is {len(raw)} bytes, shorter than the {HEADER_SIZE}-byte header"
        )
    for bo in ("<", ">"):
        if struct.unpack_from(bo + "i", raw, 0)[0] == HEADER_SIZE:
            return bo
    raise MalformedHeaderError("sizeof_hdr is not 348 under either endianness")


def load_nifti(path):
    """Load a single 3D volume from an uncompressed single-file .nii.

    Parameters
    ----------
    path : str or Path
        File whose header magic is ``n+1\\0`` or ``ni1\\0``.

    Returns
    -------
    Volume
        Values scaled by ``scl_slope``/``scl_inter`` when ``scl_slope`` is
        nonzero. Endianness is auto-detected from ``sizeof_hdr``.
    """
    raw = Path(path).read_bytes()
    bo = _detect_byteorder(raw)
    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", raw, 70)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(bo + "3f", raw, 108)
    magic = struct.unpack_from("4s", raw, 344)[0]

    if magic not in _MAGICS:
        raise MalformedHeaderError(f"unrecognized magic {magic!r}")
    if datatype not in _DTYPE_BY_CODE:
        raise UnsupportedDatatypeError(f"datatype code {datatype} not supported")
    origin, np_dtype = _DTYPE_BY_CODE[datatype]
    if bitpix != _BITPIX_BY_CODE[datatype]:
        raise MalformedHeaderError(
            f"bitpix {bitpix} inconsistent with datatype code {datatype}"
        )
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise MalformedHeaderError(f"non-positive spatial dims {dims}")
    if any(d > 1 for d in dim[4:8]):
        raise MalformedHeaderError(
            "file holds more than one volume (dim[4..7] > 1); one volume per file"
        )

    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        offset = DATA_OFFSET
    n = dims[0] * dims[1] * dims[2]
    dt = np.dtype(np_dtype).newbyteorder(bo)
    need = n * dt.itemsize
    if len(raw) - offset < need:
        raise TruncatedDataError(
            f"need {need} data bytes at offset {offset}, file has {len(raw) - offset}"
        )
    values = np.frombuffer(raw, dtype=dt, count=n, offset=offset).astype(np.float64)
    if scl_slope != 0.0:
        values = values * np.float64(scl_slope) + np.float64(scl_inter)
    if not np.all(np.isfinite(values)):
        raise NonFiniteVoxelError(f"{path}: non-finite voxel values after load")
    voxel_size = tuple(float(abs(p)) for p in pixdim[1:4])
    return Volume(
        dims=dims,
        voxel_size=voxel_size,
        data=values.reshape(dims, order="F"),
        datatype_origin=origin,
    )


def write_nifti(volume, path):
    """Write a Volume as float32 single-file .nii (native endianness).

    Uses ``scl_slope=1``, ``scl_inter=0``, ``vox_offset=352``; float32 data
    round-trips bit-exactly through :func:`load_nifti`.
    """
    hdr = bytearray(DATA_OFFSET)
    struct.pack_into("=i", hdr, 0, HEADER_SIZE)
    struct.pack_into("=8h", hdr, 40, 3, *volume.dims, 1, 1, 1, 1)
    struct.pack_into("=2h", hdr, 70, 16, 32)  # float32
    struct.pack_into("=8f", hdr, 76, 1.0, *volume.voxel_size, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("=3f", hdr, 108, float(DATA_OFFSET), 1.0, 0.0)
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    payload = volume.flat().astype(np.float32).tobytes()
    Path(path).write_bytes(bytes(hdr) + payload)


# ---------------------------------------------------------------------------
# Raw sidecar fallback
# ---------------------------------------------------------------------------

def _sidecar_path(path):
    p = Path(path)
    return p.with_name(p.name[: -len(RAW_SUFFIX)] + ".json")


def load_raw(path):
    """Load ``<name>.f32raw`` + ``<name>.json`` (dims, voxel_size)."""
    meta = json.loads(_sidecar_path(path).read_text())
    dims = tuple(int(d) for d in meta["dims"])
    voxel_size = tuple(float(v) for v in meta["voxel_size"])
    n = dims[0] * dims[1] * dims[2]
    raw = Path(path).read_bytes()
    if len(raw) < 4 * n:
        raise TruncatedDataError(
            f"{path}: need {4 * n} bytes for dims {dims}, have {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=n).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteVoxelError(f"{path}: non-finite voxel values after load")
    return Volume(
        dims=dims,
        voxel_size=voxel_size,
        data=values.reshape(dims, order="F"),
        datatype_origin="float32",
    )


def write_raw(volume, path):
    """Write the raw+sidecar pair next to each other."""
    path = Path(path)
    if not path.name.endswith(RAW_SUFFIX):
        raise ValueError(f"raw volume path must end with {RAW_SUFFIX}")
    path.write_bytes(volume.flat().astype("<f4").tobytes())
    meta = {"dims": list(volume.dims), "voxel_size": list(volume.voxel_size)}
    _sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_volume(path):
    """Load a volume from any supported format, dispatched on extension."""
    name = Path(path).name
    if name.endswith(RAW_SUFFIX):
        return load_raw(path)
    if name.endswith(".nii"):
        return load_nifti(path)
    raise ValueError(f"unsupported volume format: {name} (expected .nii or {RAW_SUFFIX})")


def load_mask(path, threshold=0.0):
    """Load a mask: inside wherever the volume value is strictly above threshold."""
    vol = load_volume(path)
    inside = vol.data > threshold
    if not inside.any():
        raise EmptyMaskError(f"{path}: no voxel above threshold {threshold}")
    return Mask(dims=vol.dims, inside=inside)


def load_subject_stack(subject_paths, mask_path, threshold=0.0, negate=False):
    """Load subject volumes in the given order plus the analysis mask."""
    vols = [load_volume(p) for p in subject_paths]
    mask = load_mask(mask_path, threshold=threshold)
    stack = SubjectStack(subjects=tuple(vols), mask=mask)
    return stack.negated() if negate else stack
