"""Sparse voxel tensor: integer index rows paired with a feature matrix.

The core data structure is an N x 3 integer index array plus an N x C feature
matrix. Storage axis order is (x, y, z) everywhere; whenever an ordering
matters, ties break lexicographically so there is no hidden nondeterminism
from hash iteration.

Tensors are immutable after construction; all operations here are pure reads.
"""

import json
from dataclasses import dataclass, field

import numpy as np

# Flag values for per-voxel point provenance.
ORIGIN_LIDAR = 0
ORIGIN_VIRTUAL = 1
ORIGIN_MIXED = 2

# 3x3x3 neighborhood offsets, lexicographic over (dz, dy, dx). Row k of a
# 27-offset kernel stack corresponds to OFFSETS_3D[k]. Center is row 13.
OFFSETS_3D = np.array(
    [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)
CENTER_3D = 13

# 3x3 neighborhood offsets over 2D cells, lexicographic over (dv, du).
OFFSETS_2D = np.array(
    [(du, dv) for dv in (-1, 0, 1) for du in (-1, 0, 1)], dtype=np.int64
)
CENTER_2D = 4


@dataclass(frozen=True)
class VoxelGridSpec:
    """Geometry of the voxel grid a tensor lives on.

    origin: metric position of the corner of voxel (0,0,0), meters.
    voxel_size: level-0 edge lengths, meters; the effective cell size at this
        level is voxel_size * stride_level.
    extent: voxel counts per axis at this level.
    stride_level: power-of-two downsampling factor relative to level 0.
    """

    origin: tuple
    voxel_size: tuple
    extent: tuple
    stride_level: int = 1

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.voxel_size) != 3 or len(self.extent) != 3:
            raise ValueError("origin, voxel_size and extent must all be 3-vectors")
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError("voxel_size components must be positive")
        if any(e <= 0 for e in self.extent):
            raise ValueError("extent components must be positive")
        if self.stride_level < 1 or self.stride_level & (self.stride_level - 1):
            raise ValueError("stride_level must be a power of two >= 1")

    @property
    def cell_size(self) -> np.ndarray:
        """Effective metric cell size at this stride level."""
        return np.asarray(self.voxel_size, dtype=np.float64) * self.stride_level

    def downsampled(self) -> "VoxelGridSpec":
        """Spec one stride level down: doubled stride, halved (ceil) extent."""
        ex, ey, ez = self.extent
        return VoxelGridSpec(
            origin=self.origin,
            voxel_size=self.voxel_size,
            extent=((ex + 1) // 2, (ey + 1) // 2, (ez + 1) // 2),
            stride_level=self.stride_level * 2,
        )


class SparseVoxelTensor:
    """Immutable (indices, features) pair with O(1) expected coordinate lookup.

    indices: (N, 3) int64, unique rows, all within the grid extent.
    features: (N, C) float64, finite.
    origin_flags: optional (N,) int8 in {ORIGIN_LIDAR, ORIGIN_VIRTUAL,
        ORIGIN_MIXED}, tracking point provenance per voxel.
    """

    def __init__(self, indices, features, spec, origin_flags=None, _validate=True):
        indices = np.ascontiguousarray(indices, dtype=np.int64).reshape(-1, 3)
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(len(indices), -1)
        if origin_flags is not None:
            origin_flags = np.ascontiguousarray(origin_flags, dtype=np.int8)
        if _validate:
            _validate_tensor(indices, features, spec, origin_flags)
        self.spec = spec
        self.indices = indices
        self.features = features
        self.origin_flags = origin_flags
        self.indices.setflags(write=False)
        self.features.setflags(write=False)
        if origin_flags is not None:
            origin_flags.setflags(write=False)
        self._lookup = None
        self._sorted = None

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def lookup(self) -> dict:
        """Map from (x, y, z) tuple to row position. Built lazily, once."""
        if self._lookup is None:
            self._lookup = {tuple(row): i for i, row in enumerate(self.indices)}
        return self._lookup

    def linear_keys(self, indices=None) -> np.ndarray:
        """Collision-free scalar keys for index rows within this extent."""
        if indices is None:
            indices = self.indices
        ex, ey, ez = self.spec.extent
        return (indices[:, 0] * ey + indices[:, 1]) * ez + indices[:, 2]

    def sorted_keys(self):
        """(sorted linear keys, row order) cached for vectorized gathers."""
        if self._sorted is None:
            keys = self.linear_keys()
            order = np.argsort(keys, kind="stable")
            self._sorted = (keys[order], order)
        return self._sorted

    def find_rows(self, indices) -> np.ndarray:
        """Row position of each query index, -1 where absent.

        Queries outside the extent are reported absent.
        """
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        extent = np.asarray(self.spec.extent, dtype=np.int64)
        rows = np.full(len(indices), -1, dtype=np.int64)
        if self.n == 0 or len(indices) == 0:
            return rows
        inside = np.all((indices >= 0) & (indices < extent), axis=1)
        if not inside.any():
            return rows
        keys = self.linear_keys(indices[inside])
        skeys, order = self.sorted_keys()
        pos = np.searchsorted(skeys, keys)
        pos = np.minimum(pos, len(skeys) - 1)
        hit = skeys[pos] == keys
        found = np.where(hit, order[pos], -1)
        rows[np.flatnonzero(inside)] = found
        return rows

    def with_features(self, features, origin_flags="keep") -> "SparseVoxelTensor":
        """Same sites, new feature matrix. Shares index storage and caches."""
        features = np.ascontiguousarray(features, dtype=np.float64)
        if len(features) != self.n:
            raise ValueError(
                f"feature row count {len(features)} != voxel count {self.n}"
            )
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        flags = self.origin_flags if origin_flags == "keep" else origin_flags
        out = SparseVoxelTensor(self.indices, features, self.spec, flags, _validate=False)
        out._lookup = self._lookup
        out._sorted = self._sorted
        return out

    def take_rows(self, rows) -> "SparseVoxelTensor":
        """Subset tensor from a row selection; features are carried bit-exactly."""
        rows = np.asarray(rows, dtype=np.int64)
        flags = None if self.origin_flags is None else self.origin_flags[rows]
        return SparseVoxelTensor(
            self.indices[rows], self.features[rows], self.spec, flags, _validate=False
        )

    def to_debug_dict(self) -> dict:
        """JSON-friendly dump; layout documented in docs/formats.md."""
        d = {
            "spec": {
                "origin": list(self.spec.origin),
                "voxel_size": list(self.spec.voxel_size),
                "extent": list(self.spec.extent),
                "stride_level": self.spec.stride_level,
            },
            "indices": self.indices.tolist(),
            "features": self.features.tolist(),
        }
        if self.origin_flags is not None:
            d["origin_flags"] = self.origin_flags.tolist()
        return d

    def to_debug_json(self) -> str:
        return json.dumps(self.to_debug_dict())


def _validate_tensor(indices, features, spec, origin_flags):
    n = len(indices)
    if features.shape[0] != n:
        raise ValueError(
            f"feature row count {features.shape[0]} does not match {n} indices"
        )
    if n and not np.isfinite(features).all():
        bad = np.flatnonzero(~np.isfinite(features).all(axis=1))[0]
        raise ValueError(f"non-finite feature values at row {bad}")
    if origin_flags is not None and len(origin_flags) != n:
        raise ValueError("origin_flags length does not match voxel count")
    if n == 0:
        return
    extent = np.asarray(spec.extent, dtype=np.int64)
    outside = ~np.all((indices >= 0) & (indices < extent), axis=1)
    if outside.any():
        bad = indices[np.flatnonzero(outside)[0]]
        raise ValueError(
            f"index {tuple(int(v) for v in bad)} outside grid extent "
            f"{tuple(int(v) for v in extent)}"
        )
    keys = (indices[:, 0] * extent[1] + indices[:, 1]) * extent[2] + indices[:, 2]
    uniq, counts = np.unique(keys, return_counts=True)
    if (counts > 1).any():
        dup_key = uniq[np.argmax(counts > 1)]
        row = np.flatnonzero(keys == dup_key)[0]
        raise ValueError(
            f"duplicate voxel index {tuple(int(v) for v in indices[row])}"
        )


def build_tensor(indices, features, spec, origin_flags=None) -> SparseVoxelTensor:
    """Construct a validated sparse tensor. Insertion order is preserved."""
    return SparseVoxelTensor(indices, features, spec, origin_flags, _validate=True)


def neighbors_3d(tensor: SparseVoxelTensor, row: int):
    """Occupied voxels among the 27 neighborhood offsets of a site.

    Returns [(offset tuple, row position), ...] ordered lexicographically over
    (dz, dy, dx). The center offset (the query row itself) is always included.
    """
    if row < 0 or row >= tensor.n:
        raise IndexError(f"row {row} out of range for tensor with {tensor.n} voxels")
    probes = tensor.indices[row] + OFFSETS_3D
    found = tensor.find_rows(probes)
    return [
        (tuple(OFFSETS_3D[k]), int(found[k]))
        for k in range(len(OFFSETS_3D))
        if found[k] >= 0
    ]
