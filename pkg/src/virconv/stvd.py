"""Stochastic voxel discard and baseline samplers.

Input discard is bin-based: voxels are stratified by planar distance into
uniform bins, nearby bins are capped at a fixed voxel budget, distant bins are
kept in full. Layer discard is a plain uniform drop applied only during
training. Random and farthest-point sampling are included as the baselines
the bin scheme is compared against.

Every sampler returns a row subset of its input: features pass through
bit-exactly and relative input order is preserved.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import grid_points
from .rng import SeededRng
from .tensor import ORIGIN_LIDAR, SparseVoxelTensor

MODE_ALL = "all_voxels"
MODE_VIRTUAL_ONLY = "virtual_only"


@dataclass(frozen=True)
class StvdConfig:
    """Bin-based input discard parameters.

    Defaults: 10 bins laid out uniformly over 100 m, nearby threshold 30 m,
    1000 voxels kept per nearby bin, 15% layer discard. Voxels beyond
    bin_range fall into an overflow bin and are always kept.
    """

    num_bins: int = 10
    nearby_limit: float = 30.0
    keep_per_nearby_bin: int = 1000
    bin_range: float = 100.0
    layer_discard_rate: float = 0.15
    mode: str = MODE_VIRTUAL_ONLY

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError("num_bins must be positive")
        if self.keep_per_nearby_bin < 1:
            raise ValueError("keep_per_nearby_bin must be >= 1")
        if self.nearby_limit > self.bin_range:
            raise ValueError("nearby_limit must not exceed bin_range")
        if not (0.0 <= self.layer_discard_rate < 1.0):
            raise ValueError("layer_discard_rate must lie in [0, 1)")
        if self.mode not in (MODE_ALL, MODE_VIRTUAL_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def bin_width(self) -> float:
        return self.bin_range / self.num_bins

    def bin_of(self, planar_dist) -> np.ndarray:
        """Bin index per distance; num_bins is the overflow bin."""
        b = np.floor(np.asarray(planar_dist) / self.bin_width).astype(np.int64)
        return np.minimum(b, self.num_bins)

    def is_nearby_bin(self, b) -> np.ndarray:
        """Nearby means the bin center is at or below the nearby limit."""
        center = (np.asarray(b) + 0.5) * self.bin_width
        return (np.asarray(b) < self.num_bins) & (center <= self.nearby_limit)


def _planar_distance(tensor: SparseVoxelTensor) -> np.ndarray:
    g = grid_points(tensor)
    return np.hypot(g[:, 0], g[:, 1])


def input_stvd(tensor: SparseVoxelTensor, cfg: StvdConfig, rng: SeededRng) -> SparseVoxelTensor:
    """Bin-based discard of nearby voxels.

    Each nearby bin keeps at most cfg.keep_per_nearby_bin voxels, chosen
    uniformly at random; distant and overflow bins are kept whole. In
    virtual_only mode, LiDAR-origin voxels bypass the discard entirely and do
    not count against bin budgets.
    """
    if tensor.n == 0:
        return tensor
    if cfg.mode == MODE_VIRTUAL_ONLY:
        if tensor.origin_flags is None:
            raise ValueError("virtual_only mode requires origin_flags on the tensor")
        exempt = tensor.origin_flags == ORIGIN_LIDAR
    else:
        exempt = np.zeros(tensor.n, dtype=bool)

    bins = cfg.bin_of(_planar_distance(tensor))
    keep = np.ones(tensor.n, dtype=bool)
    for b in range(cfg.num_bins):
        if not cfg.is_nearby_bin(b):
            continue
        members = np.flatnonzero((bins == b) & ~exempt)
        if len(members) <= cfg.keep_per_nearby_bin:
            continue
        chosen = rng.gen.choice(members, size=cfg.keep_per_nearby_bin, replace=False)
        keep[members] = False
        keep[chosen] = True
    return tensor.take_rows(np.flatnonzero(keep))


def layer_stvd(tensor: SparseVoxelTensor, rate: float, rng: SeededRng,
               training: bool) -> SparseVoxelTensor:
    """Uniform random discard used as training-time augmentation.

    Keeps exactly N - round(rate * N) voxels; identity outside training.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError("rate must lie in [0, 1)")
    if not training or rate == 0.0 or tensor.n == 0:
        return tensor
    n_keep = tensor.n - int(round(rate * tensor.n))
    rows = rng.gen.choice(tensor.n, size=n_keep, replace=False)
    rows.sort()
    return tensor.take_rows(rows)


def random_sample(tensor: SparseVoxelTensor, keep_fraction: float,
                  rng: SeededRng) -> SparseVoxelTensor:
    """Uniform random baseline sampler."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError("keep_fraction must lie in (0, 1]")
    if keep_fraction == 1.0 or tensor.n == 0:
        return tensor
    n_keep = int(round(keep_fraction * tensor.n))
    rows = rng.gen.choice(tensor.n, size=n_keep, replace=False)
    rows.sort()
    return tensor.take_rows(rows)


def fps_sample(tensor: SparseVoxelTensor, keep_count: int) -> SparseVoxelTensor:
    """Greedy farthest-point baseline over voxel grid points.

    Deterministic: starts from row 0 and breaks max-min ties by lowest row
    index. O(N * keep_count).
    """
    if keep_count > tensor.n:
        raise ValueError(f"keep_count {keep_count} exceeds voxel count {tensor.n}")
    if keep_count == tensor.n:
        return tensor
    pts = grid_points(tensor)
    chosen = np.empty(keep_count, dtype=np.int64)
    chosen[0] = 0
    min_d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for i in range(1, keep_count):
        nxt = int(np.argmax(min_d2))  # argmax takes the first max: lowest row
        chosen[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    chosen.sort()
    return tensor.take_rows(chosen)


def bin_histogram(tensor: SparseVoxelTensor, cfg: StvdConfig) -> np.ndarray:
    """Voxel count per distance bin; the last entry is the overflow bin."""
    counts = np.zeros(cfg.num_bins + 1, dtype=np.int64)
    if tensor.n:
        bins = cfg.bin_of(_planar_distance(tensor))
        np.add.at(counts, bins, 1)
    return counts
