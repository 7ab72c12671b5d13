"""Backbone assembly: early fusion, conv blocks, and the 4-level forward.

A block runs (training-only) layer discard, a fixed number of noise-resistant
conv layers sharing one projection of the block's input sites, and optionally
a strided downsampling conv. The backbone voxelizes a fused cloud, applies
the bin-based input discard once, and runs four blocks producing feature
volumes of widths 16/32/64/64 at strides 1/2/4/8.
"""

from dataclasses import dataclass, field

import numpy as np

from .conv import ActivationSpec, KernelWeights, RELU, SpconvWeights, nrconv, spconv_downsample
from .geometry import (
    AugmentationRecord,
    Calibration,
    SparsePointCloud,
    default_grid_spec,
    project_voxels,
    voxelize,
)
from .rng import SeededRng
from .stvd import StvdConfig, input_stvd, layer_stvd
from .tensor import SparseVoxelTensor, VoxelGridSpec


@dataclass(frozen=True)
class VirConvBlockSpec:
    c_in: int
    c_out: int
    num_nrconv_layers: int = 2
    layer_stvd_rate: float = 0.15
    downsample: bool = True

    def __post_init__(self):
        if self.c_out % 2:
            raise ValueError("c_out must be even")
        if self.num_nrconv_layers < 1:
            raise ValueError("num_nrconv_layers must be positive")


@dataclass(frozen=True)
class VirConvNetSpec:
    blocks: tuple

    def __post_init__(self):
        stride = 1
        for i, b in enumerate(self.blocks):
            if i and b.downsample:
                stride *= 2

    @classmethod
    def default(cls, c_in: int = 5, layer_stvd_rate: float = 0.15) -> "VirConvNetSpec":
        widths = (16, 32, 64, 64)
        blocks = []
        prev = c_in
        for i, w in enumerate(widths):
            blocks.append(
                VirConvBlockSpec(
                    c_in=prev,
                    c_out=w,
                    layer_stvd_rate=layer_stvd_rate,
                    downsample=(i > 0),
                )
            )
            prev = w
        return cls(blocks=tuple(blocks))


@dataclass
class BlockWeights:
    nrconvs: list          # KernelWeights per conv layer
    down: SpconvWeights | None

    @classmethod
    def initialize(cls, spec: VirConvBlockSpec, rng: SeededRng) -> "BlockWeights":
        layers = []
        c = spec.c_in
        for _ in range(spec.num_nrconv_layers):
            layers.append(KernelWeights.initialize(c, spec.c_out, rng))
            c = spec.c_out
        down = SpconvWeights.initialize(c, spec.c_out, rng) if spec.downsample else None
        return cls(nrconvs=layers, down=down)

    def params(self):
        out = []
        for i, kw in enumerate(self.nrconvs):
            out += [(f"nrconv{i}.{n}", a, g) for n, a, g in kw.params()]
        if self.down is not None:
            out += [(f"down.{n}", a, g) for n, a, g in self.down.params()]
        return out


@dataclass
class NetWeights:
    blocks: list

    @classmethod
    def initialize(cls, spec: VirConvNetSpec, rng: SeededRng) -> "NetWeights":
        return cls(blocks=[BlockWeights.initialize(b, rng) for b in spec.blocks])

    def params(self):
        out = []
        for i, b in enumerate(self.blocks):
            out += [(f"block{i}.{n}", a, g) for n, a, g in b.params()]
        return out


def fuse_early(lidar: SparsePointCloud, virtual: SparsePointCloud) -> SparsePointCloud:
    """Concatenate LiDAR then virtual points into one fused cloud.

    Rejects inputs with mixed provenance flags; ordering within each source is
    preserved.
    """
    if lidar.n and (lidar.beta != 0.0).any():
        raise ValueError("lidar cloud contains non-LiDAR rows (beta != 0)")
    if virtual.n:
        if (virtual.beta != 1.0).any():
            raise ValueError("virtual cloud contains non-virtual rows (beta != 1)")
        if (virtual.alpha != 0.0).any():
            raise ValueError("virtual cloud must carry zero intensity")
    return SparsePointCloud(np.concatenate([lidar.points, virtual.points], axis=0))


def split_by_origin(cloud: SparsePointCloud):
    """Inverse of fuse_early: (lidar, virtual) partitions, order preserved."""
    lidar = SparsePointCloud(cloud.points[cloud.beta == 0.0])
    virtual = SparsePointCloud(cloud.points[cloud.beta == 1.0])
    return lidar, virtual


def make_h2d_provider(calib: Calibration, record: AugmentationRecord):
    """Projection of a tensor's sites to pixel cells, cell size = stride."""

    def provider(tensor: SparseVoxelTensor) -> np.ndarray:
        return project_voxels(tensor, record, calib, pixel_cell=tensor.spec.stride_level)

    return provider


def virconv_block(tensor: SparseVoxelTensor, h2d_provider, spec: VirConvBlockSpec,
                  weights: BlockWeights, rng: SeededRng, training: bool,
                  act: ActivationSpec = RELU) -> SparseVoxelTensor:
    """Layer discard (training only), conv layers, optional downsample.

    The pixel-cell projection is computed once from the post-discard sites;
    conv layers keep the site set unchanged, so all layers in the block share
    it.
    """
    out = layer_stvd(tensor, spec.layer_stvd_rate, rng, training)
    h2d = h2d_provider(out) if out.n else np.zeros((0, 2), np.int64)
    for kw in weights.nrconvs:
        out = nrconv(out, h2d, kw, act)
    if spec.downsample:
        out = spconv_downsample(out, weights.down, act)
    return out


def virconvnet_forward(cloud: SparsePointCloud, net: VirConvNetSpec,
                       cfg: StvdConfig, calib: Calibration,
                       record: AugmentationRecord, weights: NetWeights,
                       rng: SeededRng, training: bool = False,
                       grid: VoxelGridSpec = None, apply_input_stvd: bool = True,
                       act: ActivationSpec = RELU, stage_times=None):
    """Full backbone: voxelize, input discard, four blocks.

    Returns the list of per-level output tensors. An input that voxelizes (or
    discards) to zero voxels produces empty per-level tensors, not a crash.
    stage_times, when a dict is passed, collects per-stage wall time in ms.
    """
    import time

    def tick():
        return time.perf_counter()

    grid = grid or default_grid_spec()
    t0 = tick()
    tensor = voxelize(cloud, grid)
    t1 = tick()
    if apply_input_stvd and tensor.n:
        tensor = input_stvd(tensor, cfg, rng)
    t2 = tick()
    provider = make_h2d_provider(calib, record)
    levels = []
    block_times = []
    for spec, bw in zip(net.blocks, weights.blocks):
        tb = tick()
        tensor = virconv_block(tensor, provider, spec, bw, rng, training, act)
        block_times.append((tick() - tb) * 1e3)
        levels.append(tensor)
    if stage_times is not None:
        stage_times["voxelize_ms"] = (t1 - t0) * 1e3
        stage_times["input_stvd_ms"] = (t2 - t1) * 1e3
        for i, bt in enumerate(block_times):
            stage_times[f"block{i + 1}_ms"] = bt
    return levels
