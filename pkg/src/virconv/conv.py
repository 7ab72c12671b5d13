"""Sparse convolution operators and their backward passes.

Three forward operators:

  * submanifold_conv3d: 3x3x3 convolution evaluated only at occupied sites,
    output sites identical to input sites.
  * conv2d_branch: voxels are grouped by their projected 2D pixel cell,
    max-pooled to one representative per cell, convolved with a 3x3 kernel
    over occupied cells, and the cell output is scattered back to every
    member voxel.
  * nrconv: concatenation [3D branch, 2D branch], each producing half the
    output width.

Plus spconv_downsample, a kernel-3 / stride-2 / padding-1 sparse convolution
whose output sites are the halved input sites.

Backward passes are exact: pass a Ctx to a forward call, then call the
matching *_backward with the upstream gradient. Weight gradients accumulate
into the weight object's grad buffers; the input-feature gradient is
returned. All math is float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import INVALID_2D
from .rng import SeededRng
from .tensor import CENTER_2D, OFFSETS_2D, OFFSETS_3D, SparseVoxelTensor


@dataclass(frozen=True)
class ActivationSpec:
    """Pointwise nonlinearity: relu, leaky_relu(slope) or identity."""

    kind: str = "relu"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "identity"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise ValueError("leaky_relu slope must lie in (0, 1)")

    def apply(self, pre):
        if self.kind == "relu":
            return np.maximum(pre, 0.0)
        if self.kind == "leaky_relu":
            return np.where(pre > 0, pre, self.slope * pre)
        return pre

    def deriv(self, pre):
        if self.kind == "relu":
            return (pre > 0).astype(np.float64)
        if self.kind == "leaky_relu":
            return np.where(pre > 0, 1.0, self.slope)
        return np.ones_like(pre)


RELU = ActivationSpec("relu")
IDENTITY = ActivationSpec("identity")


def _glorot(shape, fan_in, fan_out, rng: SeededRng):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.gen.uniform(-bound, bound, size=shape)


@dataclass
class KernelWeights:
    """Parameters of one noise-resistant conv layer: a 27-offset 3D stack and
    a 9-offset 2D stack, each producing half the output width."""

    w3d: np.ndarray       # (27, C_in, C_half)
    bias3d: np.ndarray    # (C_half,)
    w2d: np.ndarray       # (9, C_in, C_half)
    bias2d: np.ndarray    # (C_half,)
    g_w3d: np.ndarray = field(default=None, repr=False)
    g_bias3d: np.ndarray = field(default=None, repr=False)
    g_w2d: np.ndarray = field(default=None, repr=False)
    g_bias2d: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.w3d.shape[0] != 27 or self.w2d.shape[0] != 9:
            raise ValueError("w3d must stack 27 offsets and w2d 9")
        if self.w3d.shape[2] != self.w2d.shape[2]:
            raise ValueError("3D and 2D branches must share the half width")
        if self.g_w3d is None:
            self.zero_grads(allocate=True)

    @property
    def c_in(self) -> int:
        return self.w3d.shape[1]

    @property
    def c_half(self) -> int:
        return self.w3d.shape[2]

    @property
    def c_out(self) -> int:
        return 2 * self.c_half

    def zero_grads(self, allocate=False):
        if allocate:
            self.g_w3d = np.zeros_like(self.w3d)
            self.g_bias3d = np.zeros_like(self.bias3d)
            self.g_w2d = np.zeros_like(self.w2d)
            self.g_bias2d = np.zeros_like(self.bias2d)
        else:
            self.g_w3d[:] = 0
            self.g_bias3d[:] = 0
            self.g_w2d[:] = 0
            self.g_bias2d[:] = 0

    @classmethod
    def initialize(cls, c_in: int, c_out: int, rng: SeededRng) -> "KernelWeights":
        if c_out % 2:
            raise ValueError("c_out must be even: the two branches each emit half")
        ch = c_out // 2
        return cls(
            w3d=_glorot((27, c_in, ch), 27 * c_in, 27 * ch, rng),
            bias3d=np.zeros(ch),
            w2d=_glorot((9, c_in, ch), 9 * c_in, 9 * ch, rng),
            bias2d=np.zeros(ch),
        )

    def params(self):
        """(name, array, grad array) triples, fixed order."""
        return [
            ("w3d", self.w3d, self.g_w3d),
            ("bias3d", self.bias3d, self.g_bias3d),
            ("w2d", self.w2d, self.g_w2d),
            ("bias2d", self.bias2d, self.g_bias2d),
        ]


@dataclass
class SpconvWeights:
    """Parameters of the strided downsampling convolution."""

    w: np.ndarray      # (27, C_in, C_out)
    bias: np.ndarray   # (C_out,)
    g_w: np.ndarray = field(default=None, repr=False)
    g_bias: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.w.shape[0] != 27:
            raise ValueError("w must stack 27 offsets")
        if self.g_w is None:
            self.zero_grads(allocate=True)

    def zero_grads(self, allocate=False):
        if allocate:
            self.g_w = np.zeros_like(self.w)
            self.g_bias = np.zeros_like(self.bias)
        else:
            self.g_w[:] = 0
            self.g_bias[:] = 0

    @classmethod
    def initialize(cls, c_in: int, c_out: int, rng: SeededRng) -> "SpconvWeights":
        return cls(
            w=_glorot((27, c_in, c_out), 27 * c_in, 27 * c_out, rng),
            bias=np.zeros(c_out),
        )

    def params(self):
        return [("w", self.w, self.g_w), ("bias", self.bias, self.g_bias)]


class Ctx:
    """Saved forward state for a backward pass."""

    def __init__(self):
        self.filled = False
        self.data = {}

    def save(self, **kw):
        self.data.update(kw)
        self.filled = True

    def require(self, op: str) -> dict:
        if not self.filled:
            raise RuntimeError(f"{op} backward called before forward")
        return self.data


def _gather_pairs_3d(tensor: SparseVoxelTensor):
    """Per 3D offset, the (output row, input row) pairs where the shifted
    neighbor site is occupied. Deterministic offset and row order."""
    pairs = []
    extent = np.asarray(tensor.spec.extent, dtype=np.int64)
    skeys, order = tensor.sorted_keys()
    idx = tensor.indices
    for k in range(27):
        off = OFFSETS_3D[k]
        shifted = idx + off
        inside = np.all((shifted >= 0) & (shifted < extent), axis=1)
        out_rows = np.flatnonzero(inside)
        keys = tensor.linear_keys(shifted[inside])
        pos = np.searchsorted(skeys, keys)
        pos = np.minimum(pos, max(len(skeys) - 1, 0))
        hit = skeys[pos] == keys if len(skeys) else np.zeros(len(keys), bool)
        pairs.append((out_rows[hit], order[pos[hit]]))
    return pairs


def submanifold_conv3d(tensor: SparseVoxelTensor, weights: KernelWeights,
                       act: ActivationSpec = RELU, ctx: Ctx = None) -> SparseVoxelTensor:
    """3x3x3 convolution over occupied sites only; output sites = input sites."""
    if tensor.width != weights.c_in:
        raise ValueError(
            f"feature width {tensor.width} does not match kernel C_in {weights.c_in}"
        )
    X = tensor.features
    pre = np.broadcast_to(weights.bias3d, (tensor.n, weights.c_half)).copy()
    pairs = _gather_pairs_3d(tensor)
    for k, (out_rows, in_rows) in enumerate(pairs):
        if len(out_rows):
            np.add.at(pre, out_rows, X[in_rows] @ weights.w3d[k])
    out = act.apply(pre)
    if ctx is not None:
        ctx.save(kind="conv3d", tensor=tensor, weights=weights, act=act,
                 pre=pre, pairs=pairs)
    return tensor.with_features(out)


def submanifold_conv3d_backward(ctx: Ctx, grad_out: np.ndarray) -> np.ndarray:
    d = ctx.require("submanifold_conv3d")
    tensor, weights, act = d["tensor"], d["weights"], d["act"]
    gpre = grad_out * act.deriv(d["pre"])
    X = tensor.features
    gX = np.zeros_like(X)
    weights.g_bias3d += gpre.sum(axis=0)
    for k, (out_rows, in_rows) in enumerate(d["pairs"]):
        if len(out_rows):
            weights.g_w3d[k] += X[in_rows].T @ gpre[out_rows]
            np.add.at(gX, in_rows, gpre[out_rows] @ weights.w3d[k].T)
    return gX


def _group_cells(h2d: np.ndarray):
    """Unique valid 2D cells and the member mapping.

    Returns (valid mask, unique cells (M, 2), inverse mapping over valid rows).
    """
    valid = h2d[:, 0] != INVALID_2D
    cells = h2d[valid]
    if len(cells) == 0:
        return valid, np.zeros((0, 2), np.int64), np.zeros(0, np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    return valid, uniq, inverse.ravel()


def _gather_pairs_2d(cells: np.ndarray):
    """Per 2D offset, (output cell, input cell) pairs over occupied cells."""
    pairs = []
    if len(cells) == 0:
        return [(np.zeros(0, np.int64), np.zeros(0, np.int64))] * 9
    lo = cells.min(axis=0)
    span = cells.max(axis=0) - lo + 3  # +3 leaves room for the +-1 shifts
    keys = (cells[:, 0] - lo[0]) * span[1] + (cells[:, 1] - lo[1])
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    for k in range(9):
        du, dv = OFFSETS_2D[k]
        shifted = cells + (du, dv)
        inside = np.all((shifted >= lo) & (shifted < lo + span), axis=1)
        out_rows = np.flatnonzero(inside)
        qkeys = (shifted[inside, 0] - lo[0]) * span[1] + (shifted[inside, 1] - lo[1])
        pos = np.searchsorted(skeys, qkeys)
        pos = np.minimum(pos, len(skeys) - 1)
        hit = skeys[pos] == qkeys
        pairs.append((out_rows[hit], order[pos[hit]]))
    return pairs


def conv2d_branch(tensor: SparseVoxelTensor, h2d: np.ndarray,
                  weights: KernelWeights, act: ActivationSpec = RELU,
                  ctx: Ctx = None) -> np.ndarray:
    """Image-plane branch: pool per 2D cell, 3x3 conv over cells, scatter back.

    Returns an (N, C_half) feature matrix aligned with the input rows. Voxels
    with an invalid projection receive the empty-neighborhood result
    act(bias).
    """
    if len(h2d) != tensor.n:
        raise ValueError(f"h2d has {len(h2d)} rows for {tensor.n} voxels")
    if tensor.width != weights.c_in:
        raise ValueError(
            f"feature width {tensor.width} does not match kernel C_in {weights.c_in}"
        )
    X = tensor.features
    valid, cells, inverse = _group_cells(np.asarray(h2d, dtype=np.int64))
    m = len(cells)
    Xv = X[valid]
    pooled = np.full((m, tensor.width), -np.inf)
    if m:
        np.maximum.at(pooled, inverse, Xv)
    pre = np.broadcast_to(weights.bias2d, (m, weights.c_half)).copy()
    pairs = _gather_pairs_2d(cells)
    for k, (out_rows, in_rows) in enumerate(pairs):
        if len(out_rows):
            np.add.at(pre, out_rows, pooled[in_rows] @ weights.w2d[k])
    cell_out = act.apply(pre)
    out = np.empty((tensor.n, weights.c_half))
    empty_pre = weights.bias2d[None, :]
    out[~valid] = act.apply(empty_pre)
    if m:
        out[valid] = cell_out[inverse]
    if ctx is not None:
        ctx.save(kind="conv2d", tensor=tensor, weights=weights, act=act,
                 valid=valid, cells=cells, inverse=inverse, pooled=pooled,
                 pre=pre, pairs=pairs)
    return out


def _pool_winners(Xv: np.ndarray, inverse: np.ndarray, m: int) -> np.ndarray:
    """Row in Xv that won the per-cell channel max; ties to the lowest row.

    Returns an (m, C) int array of winning Xv rows. Valid rows arrive in
    original row order, so "first max within the cell" is the tie rule.
    """
    c = Xv.shape[1]
    winners = np.empty((m, c), dtype=np.int64)
    rows = np.arange(len(Xv))
    for ch in range(c):
        order = np.lexsort((rows, -Xv[:, ch], inverse))
        inv_sorted = inverse[order]
        starts = np.flatnonzero(np.r_[True, inv_sorted[1:] != inv_sorted[:-1]])
        winners[inv_sorted[starts], ch] = order[starts]
    return winners


def conv2d_branch_backward(ctx: Ctx, grad_out: np.ndarray) -> np.ndarray:
    d = ctx.require("conv2d_branch")
    tensor, weights, act = d["tensor"], d["weights"], d["act"]
    valid, inverse, pooled = d["valid"], d["inverse"], d["pooled"]
    X = tensor.features
    gX = np.zeros_like(X)
    m = len(d["cells"])

    # Invalid-projection rows saw act(bias) only.
    g_invalid = grad_out[~valid]
    if len(g_invalid):
        weights.g_bias2d += (
            g_invalid * act.deriv(weights.bias2d[None, :])
        ).sum(axis=0)
    if m == 0:
        return gX

    # Cell output gradient is the sum over member voxels.
    g_cell = np.zeros((m, weights.c_half))
    np.add.at(g_cell, inverse, grad_out[valid])
    gpre = g_cell * act.deriv(d["pre"])
    weights.g_bias2d += gpre.sum(axis=0)
    g_pooled = np.zeros_like(pooled)
    for k, (out_rows, in_rows) in enumerate(d["pairs"]):
        if len(out_rows):
            weights.g_w2d[k] += pooled[in_rows].T @ gpre[out_rows]
            np.add.at(g_pooled, in_rows, gpre[out_rows] @ weights.w2d[k].T)

    # Route pooled gradients to the argmax member per (cell, channel).
    Xv = X[valid]
    winners = _pool_winners(Xv, inverse, m)
    gXv = np.zeros_like(Xv)
    for ch in range(Xv.shape[1]):
        np.add.at(gXv[:, ch], winners[:, ch], g_pooled[:, ch])
    gX[valid] = gXv
    return gX


def nrconv(tensor: SparseVoxelTensor, h2d: np.ndarray, weights: KernelWeights,
           act: ActivationSpec = RELU, ctx: Ctx = None) -> SparseVoxelTensor:
    """Noise-resistant conv: concatenate [3D branch, 2D branch] features.

    Output sites equal input sites; origin flags carry through.
    """
    ctx3 = Ctx() if ctx is not None else None
    ctx2 = Ctx() if ctx is not None else None
    out3 = submanifold_conv3d(tensor, weights, act, ctx3).features
    out2 = conv2d_branch(tensor, h2d, weights, act, ctx2)
    if ctx is not None:
        ctx.save(kind="nrconv", ctx3=ctx3, ctx2=ctx2, c_half=weights.c_half)
    return tensor.with_features(np.concatenate([out3, out2], axis=1))


def nrconv_backward(ctx: Ctx, grad_out: np.ndarray) -> np.ndarray:
    d = ctx.require("nrconv")
    ch = d["c_half"]
    g3 = submanifold_conv3d_backward(d["ctx3"], grad_out[:, :ch])
    g2 = conv2d_branch_backward(d["ctx2"], grad_out[:, ch:])
    return g3 + g2


def spconv_downsample(tensor: SparseVoxelTensor, weights: SpconvWeights,
                      act: ActivationSpec = RELU, ctx: Ctx = None) -> SparseVoxelTensor:
    """Kernel-3 / stride-2 / padding-1 convolution onto the halved grid.

    Output sites are the unique floor(index / 2) of the input sites; each
    output accumulates every input inside its receptive field
    {2*out - 1 .. 2*out + 1} per axis. Output spec doubles stride_level.
    """
    if tensor.width != weights.w.shape[1]:
        raise ValueError(
            f"feature width {tensor.width} does not match kernel C_in "
            f"{weights.w.shape[1]}"
        )
    out_spec = tensor.spec.downsampled()
    c_out = weights.w.shape[2]
    if tensor.n == 0:
        flags = None if tensor.origin_flags is None else np.zeros(0, np.int8)
        return SparseVoxelTensor(
            np.zeros((0, 3), np.int64), np.zeros((0, c_out)), out_spec, flags,
            _validate=False,
        )
    out_idx = np.unique(tensor.indices // 2, axis=0)
    X = tensor.features
    pre = np.broadcast_to(weights.bias, (len(out_idx), c_out)).copy()
    extent = np.asarray(tensor.spec.extent, dtype=np.int64)
    skeys, order = tensor.sorted_keys()
    pairs = []
    for k in range(27):
        probe = 2 * out_idx + OFFSETS_3D[k]
        inside = np.all((probe >= 0) & (probe < extent), axis=1)
        out_rows = np.flatnonzero(inside)
        keys = tensor.linear_keys(probe[inside])
        pos = np.searchsorted(skeys, keys)
        pos = np.minimum(pos, len(skeys) - 1)
        hit = skeys[pos] == keys
        out_rows, in_rows = out_rows[hit], order[pos[hit]]
        pairs.append((out_rows, in_rows))
        if len(out_rows):
            np.add.at(pre, out_rows, X[in_rows] @ weights.w[k])
    out = act.apply(pre)
    flags = None
    if tensor.origin_flags is not None:
        # A coarse voxel's flag is the mean provenance of its finest members.
        flags = np.zeros(len(out_idx), dtype=np.int8)
        parent = _rows_in(out_idx, tensor.indices // 2)
        from .tensor import ORIGIN_LIDAR, ORIGIN_MIXED, ORIGIN_VIRTUAL

        frac = np.zeros(len(out_idx))
        cnt = np.zeros(len(out_idx))
        is_virtual = (tensor.origin_flags == ORIGIN_VIRTUAL) * 1.0
        is_virtual += (tensor.origin_flags == ORIGIN_MIXED) * 0.5
        np.add.at(frac, parent, is_virtual)
        np.add.at(cnt, parent, 1.0)
        frac /= cnt
        flags = np.where(frac < 0.5, ORIGIN_LIDAR,
                         np.where(frac > 0.5, ORIGIN_VIRTUAL, ORIGIN_MIXED)).astype(np.int8)
    result = SparseVoxelTensor(out_idx, out, out_spec, flags, _validate=False)
    if ctx is not None:
        ctx.save(kind="spconv", tensor=tensor, weights=weights, act=act,
                 pre=pre, pairs=pairs, n_out=len(out_idx))
    return result


def _rows_in(table: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row of each query in a table of unique sorted index rows."""
    span = queries.max(axis=0) + 1
    tkeys = (table[:, 0] * span[1] + table[:, 1]) * span[2] + table[:, 2]
    qkeys = (queries[:, 0] * span[1] + queries[:, 1]) * span[2] + queries[:, 2]
    order = np.argsort(tkeys)
    pos = np.searchsorted(tkeys[order], qkeys)
    return order[pos]


def spconv_downsample_backward(ctx: Ctx, grad_out: np.ndarray) -> np.ndarray:
    d = ctx.require("spconv_downsample")
    tensor, weights, act = d["tensor"], d["weights"], d["act"]
    gpre = grad_out * act.deriv(d["pre"])
    X = tensor.features
    gX = np.zeros_like(X)
    weights.g_bias += gpre.sum(axis=0)
    for k, (out_rows, in_rows) in enumerate(d["pairs"]):
        if len(out_rows):
            weights.g_w[k] += X[in_rows].T @ gpre[out_rows]
            np.add.at(gX, in_rows, gpre[out_rows] @ weights.w[k].T)
    return gX
