"""Voxel-grid containers, linear indexing, 6-adjacency, RLE label codec and raw file I/O.

Conventions shared by every other module:

* dims are ``(nx, ny, nz)`` and flat arrays are x-fastest:
  ``index = x + nx * (y + ny * z)``.
* intensity volumes are unsigned 8- or 16-bit and are consumed as raw
  integers (no rescaling); label maps are unsigned 32-bit with 0 meaning
  "unassigned".
* on disk a raster is a pair ``<name>.json`` (sidecar header) +
  ``<name>.raw`` (little-endian blob), byte-exact round trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Volume3D",
    "LabelMap",
    "CodecError",
    "VolumeIOError",
    "linear_index",
    "coords_from_index",
    "neighbors6",
    "rle_encode",
    "rle_decode",
    "rle_apply",
    "rle_diff",
    "save_volume",
    "load_volume",
    "save_labels",
    "load_labels",
]

_DTYPES = {"u8": np.uint8, "u16": np.uint16, "u32": np.uint32}
_DTYPE_NAMES = {np.dtype(np.uint8): "u8", np.dtype(np.uint16): "u16", np.dtype(np.uint32): "u32"}

# neighbor offsets in the deterministic order (-x, +x, -y, +y, -z, +z)
_N6_STEPS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


class CodecError(ValueError):
    """Malformed RLE runs (unsorted, overlapping, bad lengths)."""


class VolumeIOError(ValueError):
    """Header/blob mismatch or unsupported raster file."""


def _check_dims(dims):
    nx, ny, nz = (int(d) for d in dims)
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise ValueError(f"dims must be positive, got {dims!r}")
    return nx, ny, nz


@dataclass
class Volume3D:
    """Scalar intensity grid; ``values`` is the flat x-fastest array."""

    dims: tuple[int, int, int]
    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.values = np.asarray(self.values)
        if self.values.dtype not in (np.uint8, np.uint16):
            raise ValueError(f"intensity dtype must be u8 or u16, got {self.values.dtype}")
        self.values = np.ascontiguousarray(self.values.reshape(-1))
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if self.values.size != n:
            raise ValueError(f"values length {self.values.size} != nx*ny*nz = {n}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def size(self) -> int:
        return self.values.size

    def as_3d(self) -> np.ndarray:
        """(nz, ny, nx) view; C order of that view matches the flat layout."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx)


@dataclass
class LabelMap:
    """Per-voxel u32 labels, 0 reserved for unassigned/background."""

    dims: tuple[int, int, int]
    labels: np.ndarray

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.uint32).reshape(-1))
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if self.labels.size != n:
            raise ValueError(f"labels length {self.labels.size} != nx*ny*nz = {n}")

    @property
    def size(self) -> int:
        return self.labels.size

    def as_3d(self) -> np.ndarray:
        nx, ny, nz = self.dims
        return self.labels.reshape(nz, ny, nx)

    def copy(self) -> "LabelMap":
        return LabelMap(self.dims, self.labels.copy())


def linear_index(dims, x: int, y: int, z: int) -> int:
    """Flat index of voxel (x, y, z); raises IndexError out of bounds."""
    nx, ny, nz = dims
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexError(f"voxel ({x},{y},{z}) outside dims {dims}")
    return x + nx * (y + ny * z)


def coords_from_index(dims, index: int) -> tuple[int, int, int]:
    """Inverse of linear_index."""
    nx, ny, nz = dims
    if not (0 <= index < nx * ny * nz):
        raise IndexError(f"index {index} outside dims {dims}")
    x = index % nx
    rest = index // nx
    return x, rest % ny, rest // ny


def neighbors6(dims, index: int) -> list[int]:
    """In-bounds face neighbors of ``index``, ordered (-x,+x,-y,+y,-z,+z)."""
    x, y, z = coords_from_index(dims, index)
    nx, ny, nz = dims
    out = []
    for dx, dy, dz in _N6_STEPS:
        px, py, pz = x + dx, y + dy, z + dz
        if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz:
            out.append(px + nx * (py + ny * pz))
    return out


# ---------------------------------------------------------------------------
# RLE codec


def rle_encode(labelmap: LabelMap) -> list[tuple[int, int, int]]:
    """Canonical (start, length, label) runs covering the whole map.

    Adjacent equal-label runs are merged, so encode(decode(encode(m)))
    is byte-stable.
    """
    labels = labelmap.labels
    n = labels.size
    if n == 0:
        return []
    boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    return [(int(s), int(e - s), int(labels[s])) for s, e in zip(starts, ends)]


def _validate_runs(runs, n: int):
    prev_end = 0
    for start, length, label in runs:
        if length < 1:
            raise CodecError(f"run length must be >= 1, got {length}")
        if start < prev_end:
            raise CodecError(f"runs unsorted or overlapping at start {start}")
        if start + length > n:
            raise CodecError(f"run ({start},{length}) exceeds volume of {n} voxels")
        if label < 0 or label > 0xFFFFFFFF:
            raise CodecError(f"label {label} outside u32 range")
        prev_end = start + length


def rle_decode(runs, dims, fill: int = 0) -> LabelMap:
    """Expand runs to a full LabelMap; gaps take ``fill``."""
    nx, ny, nz = _check_dims(dims)
    n = nx * ny * nz
    _validate_runs(runs, n)
    labels = np.full(n, fill, dtype=np.uint32)
    for start, length, label in runs:
        labels[start : start + length] = label
    return LabelMap((nx, ny, nz), labels)


def rle_apply(labelmap: LabelMap, runs) -> LabelMap:
    """New LabelMap with ``runs`` written over a copy of ``labelmap``."""
    _validate_runs(runs, labelmap.size)
    out = labelmap.copy()
    for start, length, label in runs:
        out.labels[start : start + length] = label
    return out


def rle_diff(old: np.ndarray, new: np.ndarray) -> list[tuple[int, int, int]]:
    """Runs covering exactly the voxels where ``new`` differs from ``old``.

    Run values come from ``new``, so ``rle_apply(old_map, runs)`` reproduces
    ``new`` and untouched voxels are never mentioned.  Contiguous changed
    voxels sharing a new label collapse into one run.
    """
    old = np.asarray(old).reshape(-1)
    new = np.asarray(new).reshape(-1)
    if old.shape != new.shape:
        raise ValueError(f"label arrays differ in length: {old.size} vs {new.size}")
    changed = np.flatnonzero(old != new)
    if changed.size == 0:
        return []
    vals = new[changed]
    # a run breaks where the changed voxels stop being consecutive or the value flips
    brk = np.flatnonzero((np.diff(changed) != 1) | (vals[1:] != vals[:-1])) + 1
    starts = np.concatenate(([0], brk))
    ends = np.concatenate((brk, [changed.size]))
    return [
        (int(changed[s]), int(changed[e - 1] - changed[s] + 1), int(vals[s]))
        for s, e in zip(starts, ends)
    ]


# ---------------------------------------------------------------------------
# Raster file I/O


def _sidecar(path: Path, ext: str) -> Path:
    # append rather than substitute, so dotted base names keep their identity
    return path.parent / (path.name + ext)


def _write_raster(path, dims, array: np.ndarray, spacing) -> None:
    path = Path(path)
    dtype_name = _DTYPE_NAMES.get(array.dtype)
    if dtype_name is None:
        raise VolumeIOError(f"unsupported sample dtype {array.dtype}")
    header = {
        "dims": list(dims),
        "dtype": dtype_name,
        "order": "x-fastest",
        "endianness": "little",
        "spacing": list(spacing),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _sidecar(path, ".json").write_text(json.dumps(header, indent=2) + "\n")
    blob = np.ascontiguousarray(array)
    if blob.dtype.byteorder == ">":  # pragma: no cover - LE hosts
        blob = blob.astype(blob.dtype.newbyteorder("<"))
    _sidecar(path, ".raw").write_bytes(blob.tobytes())


def _read_raster(path, want: tuple[str, ...]):
    path = Path(path)
    header_path = _sidecar(path, ".json")
    blob_path = _sidecar(path, ".raw")
    if not header_path.exists():
        raise VolumeIOError(f"missing sidecar header {header_path}")
    header = json.loads(header_path.read_text())
    dtype_name = header.get("dtype")
    if dtype_name not in want:
        raise VolumeIOError(f"{path}: dtype {dtype_name!r} not one of {want}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise VolumeIOError(f"{path}: unsupported order {header.get('order')!r}")
    if header.get("endianness", "little") != "little":
        raise VolumeIOError(f"{path}: unsupported endianness")
    dims = _check_dims(header["dims"])
    dtype = np.dtype(_DTYPES[dtype_name]).newbyteorder("<")
    blob = blob_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(blob) != expected:
        raise VolumeIOError(f"{path}: blob is {len(blob)} bytes, header implies {expected}")
    array = np.frombuffer(blob, dtype=dtype).astype(_DTYPES[dtype_name])
    spacing = tuple(header.get("spacing", (1.0, 1.0, 1.0)))
    return dims, array, spacing


def save_volume(path, volume: Volume3D) -> None:
    _write_raster(path, volume.dims, volume.values, volume.spacing)


def load_volume(path) -> Volume3D:
    dims, array, spacing = _read_raster(path, ("u8", "u16"))
    return Volume3D(dims, array, spacing)


def save_labels(path, labelmap: LabelMap) -> None:
    _write_raster(path, labelmap.dims, labelmap.labels, (1.0, 1.0, 1.0))


def load_labels(path) -> LabelMap:
    dims, array, _ = _read_raster(path, ("u32",))
    return LabelMap(dims, array)
