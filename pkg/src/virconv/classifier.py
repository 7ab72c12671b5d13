"""Per-voxel noise classification testbed.

A deliberately tiny model: one conv layer (either the two-branch
noise-resistant operator or its 3D-only half-width sibling) followed by a
per-voxel linear head, trained with logistic loss and plain full-batch
gradient descent. Its purpose is to measure how much the image-plane branch
helps at separating displaced boundary points from clean geometry.
"""

from dataclasses import dataclass

import numpy as np

from .conv import (
    ActivationSpec,
    Ctx,
    KernelWeights,
    nrconv,
    nrconv_backward,
    submanifold_conv3d,
    submanifold_conv3d_backward,
)
from .geometry import AugmentationRecord, project_voxels, voxel_row_of_points, voxelize
from .rng import SeededRng
from .scene import Scene, SyntheticSceneSpec, synthetic_calibration
from .tensor import VoxelGridSpec

HEAD_NRCONV = "nrconv_head"
HEAD_CONV3D = "conv3d_head"

# Fine isotropic grid.  At this resolution, surfaces past ~30 m project to
# adjacent image pixels but land several voxels apart in 3D, so a 3x3x3
# neighbourhood around a distant voxel is usually empty while its image-plane
# neighbourhood is not.  That is the regime where the image branch has
# information the 3D branch cannot reach.
CLASSIFIER_GRID = VoxelGridSpec(
    origin=(0.0, -40.0, -3.0),
    voxel_size=(0.05, 0.05, 0.05),
    extent=(1408, 1600, 80),
    stride_level=1,
)

# Image cells of a few pixels give the 3x3 cell convolution enough context to
# compare each voxel's depth with its on-image neighbours.
CLASSIFIER_PIXEL_CELL = 3


def default_classifier_scene_spec() -> SyntheticSceneSpec:
    """Scene recipe for the noise-classification study: distant objects only.

    Distant surfaces are sparse in 3D at the classifier grid resolution, which
    is exactly where displaced boundary points are hard to tell apart from
    clean-but-isolated voxels without image-plane context.
    """
    return SyntheticSceneSpec(
        num_objects=7,
        x_range=(35.0, 65.0),
        y_range=(-12.0, 12.0),
        virtual_multiplier=1.0,
        boundary_noise_rate=0.4,
        noise_magnitude=1.5,
    )


@dataclass
class VoxelDataset:
    tensor: object
    h2d: np.ndarray
    labels: np.ndarray   # bool per voxel: majority of member points displaced


def scene_to_dataset(scene: Scene, grid: VoxelGridSpec = CLASSIFIER_GRID,
                     pixel_cell: int = CLASSIFIER_PIXEL_CELL) -> VoxelDataset:
    # Only the virtual cloud carries displaced points; including real returns
    # would let either head lean on the provenance flag instead of geometry.
    tensor = voxelize(scene.virtual, grid)
    rows = voxel_row_of_points(scene.virtual, tensor)
    kept = rows >= 0
    noisy = np.zeros(tensor.n)
    total = np.zeros(tensor.n)
    np.add.at(noisy, rows[kept], scene.noise_labels[kept].astype(np.float64))
    np.add.at(total, rows[kept], 1.0)
    labels = noisy / total > 0.5
    h2d = project_voxels(tensor, AugmentationRecord.identity(),
                         synthetic_calibration(), pixel_cell=pixel_cell)
    return VoxelDataset(tensor=tensor, h2d=h2d, labels=labels)


def _normalize(tensor):
    """Center coordinates so the linear head does not chase absolute position."""
    f = tensor.features.copy()
    f[:, 0] = f[:, 0] / 35.0 - 1.0
    f[:, 1] = f[:, 1] / 40.0
    f[:, 2] = f[:, 2] / 3.0
    return tensor.with_features(f)


class NoiseClassifier:
    """Conv layer + linear head producing one logit per voxel."""

    def __init__(self, head: str, c_in: int = 5, c_mid: int = 8, rng: SeededRng = None):
        if head not in (HEAD_NRCONV, HEAD_CONV3D):
            raise ValueError(f"unknown head {head!r}")
        self.head = head
        # The 3D-only variant uses the full width through the 3D stack so the
        # two heads expose the same feature budget to the linear layer.
        self.kw = KernelWeights.initialize(c_in, 2 * c_mid if head == HEAD_CONV3D else c_mid, rng)
        self.c_feat = self.kw.c_half if head == HEAD_CONV3D else c_mid
        self.act = ActivationSpec("leaky_relu", 0.1)
        bound = 1.0 / np.sqrt(self.c_feat)
        self.w_lin = rng.gen.uniform(-bound, bound, self.c_feat)
        self.b_lin = 0.0

    def logits(self, ds: VoxelDataset, ctx: Ctx = None):
        t = _normalize(ds.tensor)
        if self.head == HEAD_NRCONV:
            feats = nrconv(t, ds.h2d, self.kw, self.act, ctx).features
        else:
            feats = submanifold_conv3d(t, self.kw, self.act, ctx).features
        return feats @ self.w_lin + self.b_lin, feats

    def train_step(self, datasets, lr: float):
        """One full-batch gradient descent step; returns the mean loss."""
        self.kw.zero_grads()
        g_wlin = np.zeros_like(self.w_lin)
        g_blin = 0.0
        total_loss = 0.0
        total_n = 0
        for ds in datasets:
            ctx = Ctx()
            logit, feats = self.logits(ds, ctx)
            y = ds.labels.astype(np.float64)
            p = 1.0 / (1.0 + np.exp(-logit))
            eps = 1e-12
            total_loss += -np.sum(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
            total_n += len(y)
            dlogit = p - y
            g_wlin += feats.T @ dlogit
            g_blin += dlogit.sum()
            dfeats = np.outer(dlogit, self.w_lin)
            if self.head == HEAD_NRCONV:
                nrconv_backward(ctx, dfeats)
            else:
                submanifold_conv3d_backward(ctx, dfeats)
        scale = 1.0 / total_n
        loss = total_loss * scale
        if not np.isfinite(loss):
            raise FloatingPointError(
                "training loss diverged to NaN/Inf; lower the learning rate"
            )
        self.w_lin -= lr * scale * g_wlin
        self.b_lin -= lr * scale * g_blin
        for _, arr, grad in self.kw.params():
            arr -= lr * scale * grad
        return loss

    def scores(self, ds: VoxelDataset) -> np.ndarray:
        logit, _ = self.logits(ds)
        return logit


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUC (ties share ranks)."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    # Average ranks over ties.
    i = 0
    rank_vals = np.arange(1, len(scores) + 1, dtype=np.float64)
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        rank_vals[i: j + 1] = (i + j + 2) / 2.0
        i = j + 1
    ranks[order] = rank_vals
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def train_noise_classifier(train_scenes, eval_scenes, head: str,
                           epochs: int = 120, lr: float = 0.8,
                           rng: SeededRng = None) -> dict:
    """Train on one scene set, report held-out AUC on another.

    Fully deterministic given the rng seed and scene set.
    """
    train_ds = [scene_to_dataset(s) for s in train_scenes]
    eval_ds = [scene_to_dataset(s) for s in eval_scenes]
    model = NoiseClassifier(head=head, rng=rng)
    losses = []
    for _ in range(epochs):
        losses.append(model.train_step(train_ds, lr))
    scores = np.concatenate([model.scores(ds) for ds in eval_ds])
    labels = np.concatenate([ds.labels for ds in eval_ds])
    return {
        "head": head,
        "auc": roc_auc(scores, labels),
        "final_loss": losses[-1],
        "losses": losses,
        "eval_scores": scores,
        "eval_labels": labels,
    }
