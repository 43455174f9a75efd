"""Masked 3D volume spaces, voxel adjacency, and the VOL1 / manifest file formats.

Flat feature indices enumerate in-mask voxels in lexicographic order with
``x`` varying fastest, i.e. Fortran order over the ``(nx, ny, nz)`` grid.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ._validation import check_matrix
from .exceptions import ArgumentError, EmptyMask, FormatError, NumericError, ShapeError

MAGIC = b"VOL1"
_HEADER = struct.Struct("<4s3I3f")


class VolumeSpace:
    """A 3D grid with a boolean mask and a flat index over in-mask voxels.

    Instances are immutable; the mask array is stored read-only.
    """

    def __init__(self, dims, voxel_size_mm, mask):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ArgumentError(f"dims must be three positive ints, got {dims}")
        voxel_size_mm = tuple(float(s) for s in voxel_size_mm)
        if len(voxel_size_mm) != 3 or min(voxel_size_mm) <= 0:
            raise ArgumentError(f"voxel sizes must be positive, got {voxel_size_mm}")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != dims:
            raise ShapeError(f"mask shape {mask.shape} does not match dims {dims}")
        grid_index = np.flatnonzero(mask.ravel(order="F"))
        if grid_index.size == 0:
            raise EmptyMask("mask has no true cells")

        mask = mask.copy()
        mask.flags.writeable = False
        lookup = np.full(mask.size, -1, dtype=np.int64)
        lookup[grid_index] = np.arange(grid_index.size)
        lookup.flags.writeable = False
        coords = np.column_stack(np.unravel_index(grid_index, dims, order="F"))
        coords.flags.writeable = False

        self.dims = dims
        self.voxel_size_mm = voxel_size_mm
        self.mask = mask
        self._grid_index = grid_index
        self._lookup = lookup
        self._coords = coords

    @property
    def p(self):
        return self._grid_index.size

    @property
    def coords(self):
        """(p, 3) integer grid coordinates, row j is the voxel of flat index j."""
        return self._coords

    def coords_mm(self):
        return self._coords * np.asarray(self.voxel_size_mm)

    def flat_index(self, coord):
        """Flat index of a grid coordinate, or None when out of mask/grid."""
        x, y, z = (int(c) for c in coord)
        nx, ny, nz = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            return None
        j = self._lookup[x + nx * (y + ny * z)]
        return None if j < 0 else int(j)

    def coord_of(self, j):
        return tuple(int(c) for c in self._coords[j])

    def to_grid(self, values, fill=0.0):
        """Scatter a length-p vector into a dense ``dims`` array."""
        values = np.asarray(values)
        if values.shape != (self.p,):
            raise ShapeError(f"expected {self.p} values, got shape {values.shape}")
        out = np.full(int(np.prod(self.dims)), fill, dtype=values.dtype)
        out[self._grid_index] = values
        return out.reshape(self.dims, order="F")

    def from_grid(self, grid):
        grid = np.asarray(grid)
        if grid.shape != self.dims:
            raise ShapeError(f"grid shape {grid.shape} does not match dims {self.dims}")
        return grid.ravel(order="F")[self._grid_index]

    def __eq__(self, other):
        if not isinstance(other, VolumeSpace):
            return NotImplemented
        return (self.dims == other.dims
                and np.allclose(self.voxel_size_mm, other.voxel_size_mm)
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.dims, self.voxel_size_mm, self.mask.tobytes()))

    def __repr__(self):
        return f"VolumeSpace(dims={self.dims}, voxel_size_mm={self.voxel_size_mm}, p={self.p})"


def build_space(dims, voxel_size_mm=(1.0, 1.0, 1.0), mask=None):
    """Build a :class:`VolumeSpace`; ``mask=None`` means the full grid."""
    if mask is None:
        mask = np.ones(tuple(int(d) for d in dims), dtype=bool)
    return VolumeSpace(dims, voxel_size_mm, mask)


def ellipsoid_mask(dims, semi_axes=None):
    """Cells whose normalized radius from the grid center is at most 1.

    ``semi_axes`` is in voxels and defaults to just under half of each dim.
    """
    dims = tuple(int(d) for d in dims)
    if semi_axes is None:
        semi_axes = tuple((d - 1) / 2.0 for d in dims)
    center = [(d - 1) / 2.0 for d in dims]
    grids = np.meshgrid(*[np.arange(d, dtype=float) for d in dims], indexing="ij")
    r2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, semi_axes))
    return r2 <= 1.0


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected 6-connectivity graph over flat voxel indices.

    ``edges`` is an (E, 2) array with ``edges[:, 0] < edges[:, 1]``, sorted.
    """

    n_nodes: int
    edges: np.ndarray

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def degree(self):
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def neighbors(self):
        """List of sorted neighbor arrays, one per node."""
        adj = self.to_sparse().tocsr()
        return [adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(self.n_nodes)]

    def to_sparse(self):
        """Symmetric scipy CSR adjacency matrix (sklearn ``connectivity`` format)."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * i.size)
        m = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n_nodes,) * 2)
        m = m.tocsr()
        m.sort_indices()
        return m

    def n_components(self):
        from scipy.sparse.csgraph import connected_components
        return connected_components(self.to_sparse(), directed=False)[0]

    @classmethod
    def complete(cls, n_nodes):
        i, j = np.triu_indices(n_nodes, k=1)
        return cls(n_nodes, np.column_stack([i, j]).astype(np.int64))

    @classmethod
    def from_edges(cls, n_nodes, edges):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ArgumentError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ArgumentError("self-loops are not allowed")
        edges = np.sort(edges, axis=1)
        edges = np.unique(edges, axis=0)
        return cls(int(n_nodes), edges)


def adjacency(space):
    """6-connectivity graph restricted to in-mask voxels."""
    nx, ny, nz = space.dims
    lookup = space._lookup.reshape(space.dims, order="F")
    pairs = []
    for a, b in ((lookup[:-1, :, :], lookup[1:, :, :]),
                 (lookup[:, :-1, :], lookup[:, 1:, :]),
                 (lookup[:, :, :-1], lookup[:, :, 1:])):
        ok = (a >= 0) & (b >= 0)
        pairs.append(np.column_stack([a[ok], b[ok]]))
    edges = np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    edges = np.sort(edges, axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return AdjacencyGraph(space.p, edges[order].astype(np.int64))


@dataclass(frozen=True, eq=False)
class ContrastImage:
    """One statistical map: a value per in-mask voxel of ``space``."""

    space: VolumeSpace
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.space.p,):
            raise ShapeError(f"expected {self.space.p} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("image values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(eq=False)
class Dataset:
    """Samples-by-features matrix with -1/+1 labels and sample ids.

    ``groups`` optionally identifies the subject each row belongs to, used
    to pair conditions for within-subject tests.
    """

    X: np.ndarray
    y: np.ndarray
    sample_ids: list = None
    space: VolumeSpace = None
    groups: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = check_matrix(self.X)
        n = self.X.shape[0]
        if n < 2:
            raise ArgumentError("a dataset needs at least two samples")
        self.y = np.asarray(self.y)
        if self.y.shape != (n,):
            raise ShapeError(f"got labels of shape {self.y.shape} for {n} samples")
        if not np.all(np.isin(self.y, (-1, 1))):
            raise ArgumentError("labels must be -1 or +1")
        self.y = self.y.astype(np.int64)
        if self.sample_ids is None:
            self.sample_ids = [f"s{i:04d}" for i in range(n)]
        self.sample_ids = [str(s) for s in self.sample_ids]
        if len(self.sample_ids) != n:
            raise ShapeError("sample_ids length does not match row count")
        if self.space is not None and self.space.p != self.X.shape[1]:
            raise ShapeError(f"X has {self.X.shape[1]} columns, space has p={self.space.p}")
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (n,):
                raise ShapeError("groups length does not match row count")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], [self.sample_ids[i] for i in rows],
                       self.space, None if self.groups is None else self.groups[rows])

    def with_features(self, X, space=None):
        return Dataset(X, self.y, list(self.sample_ids), space, self.groups)


# --- VOL1 files -------------------------------------------------------------

def write_volume(image, path):
    space = image.space
    header = _HEADER.pack(MAGIC, *space.dims, *space.voxel_size_mm)
    mask_bytes = space.mask.ravel(order="F").astype(np.uint8).tobytes()
    payload = np.asarray(image.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + mask_bytes + payload)


def read_volume(path):
    """Read a VOL1 file into a :class:`ContrastImage` (values as float64)."""
    space, values = _read_vol1(path)
    return ContrastImage(space, values.astype(np.float64))


def read_volume_f32(path):
    """Like :func:`read_volume` but returns the raw float32 payload."""
    return _read_vol1(path)


def _read_vol1(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n_cells = nx * ny * nz
    offset = _HEADER.size
    if len(raw) < offset + n_cells:
        raise FormatError(f"{path}: truncated mask")
    mask_raw = np.frombuffer(raw, dtype=np.uint8, count=n_cells, offset=offset)
    if np.any(mask_raw > 1):
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    mask = mask_raw.astype(bool).reshape((nx, ny, nz), order="F")
    try:
        space = VolumeSpace((nx, ny, nz), (sx, sy, sz), mask)
    except (EmptyMask, ArgumentError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    offset += n_cells
    expected = offset + 4 * space.p
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - offset} bytes, expected {4 * space.p}")
    values = np.frombuffer(raw, dtype="<f4", count=space.p, offset=offset).copy()
    return space, values


def write_mask(space, path):
    write_volume(ContrastImage(space, np.ones(space.p)), path)


def read_mask(path):
    return read_volume(path).space


# --- dataset manifests ------------------------------------------------------

def write_dataset(dataset, directory, mask_path=None, volume_dir="volumes"):
    """Write one VOL1 file per row plus ``manifest.json``; returns the manifest path.

    Paths inside the manifest are relative to the manifest's directory.
    """
    if dataset.space is None:
        raise ArgumentError("dataset has no VolumeSpace to write")
    directory = Path(directory)
    (directory / volume_dir).mkdir(parents=True, exist_ok=True)
    if mask_path is None:
        mask_path = directory / "mask.vol1"
        write_mask(dataset.space, mask_path)
    samples = []
    for i, sid in enumerate(dataset.sample_ids):
        vol = directory / volume_dir / f"{sid}.vol1"
        write_volume(ContrastImage(dataset.space, dataset.X[i]), vol)
        entry = {"sample_id": sid, "label": int(dataset.y[i]),
                 "path": os.path.relpath(vol, directory)}
        if dataset.groups is not None:
            entry["subject"] = str(dataset.groups[i])
        samples.append(entry)
    manifest = {"mask": os.path.relpath(mask_path, directory), "samples": samples}
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def read_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        mask_rel = manifest["mask"]
        samples = manifest["samples"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: invalid manifest ({exc})") from exc
    base = manifest_path.parent
    space = read_mask(base / mask_rel)
    rows, labels, ids, subjects = [], [], [], []
    for entry in samples:
        vspace, values = _read_vol1(base / entry["path"])
        if vspace != space:
            raise FormatError(f"{entry['path']}: volume space differs from the mask")
        rows.append(values.astype(np.float64))
        labels.append(int(entry["label"]))
        ids.append(str(entry["sample_id"]))
        subjects.append(entry.get("subject"))
    groups = None if any(s is None for s in subjects) else np.asarray(subjects)
    return Dataset(np.vstack(rows), np.asarray(labels), ids, space, groups)
