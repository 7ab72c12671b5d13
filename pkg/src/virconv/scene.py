"""Synthetic scene generation for density and noise experiments.

Scenes contain axis-aligned box obstacles observed by a co-located LiDAR and
camera at the origin (x forward, y left, z up). LiDAR points sample visible
box faces with range-decaying density. Virtual points are ray-cast densely,
one bundle per covered image pixel, mimicking depth-completion output: points
whose pixel sits on an instance silhouette boundary are displaced along the
camera ray with some probability and labelled as noise.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import (
    Calibration,
    SparsePointCloud,
    parse_kitti_calib,
    read_velodyne_bin,
    read_virtual_bin,
    write_kitti_calib,
    write_point_bin,
)
from .rng import SeededRng

IMAGE_W = 1216
IMAGE_H = 368
FOCAL = 400.0

BOUNDARY_BAND_PX = 2  # silhouette pixels within this distance count as boundary


@dataclass(frozen=True)
class SyntheticSceneSpec:
    num_objects: int = 6
    size_min: tuple = (3.2, 1.5, 1.3)   # l, w, h ranges, meters
    size_max: tuple = (4.6, 2.0, 1.8)
    x_range: tuple = (8.0, 50.0)
    y_range: tuple = (-16.0, 16.0)
    ground_z: float = -1.6
    lidar_density: float = 60.0          # points per m^2 at 10 m, 1/r^2 decay
    virtual_multiplier: float = 1.0      # ray samples per covered pixel
    boundary_noise_rate: float = 0.4     # fraction of boundary-band points displaced
    noise_magnitude: float = 1.0         # max displacement along the camera ray, m

    def __post_init__(self):
        if self.lidar_density <= 0 or self.virtual_multiplier <= 0:
            raise ValueError("densities must be positive")
        if not (0.0 <= self.boundary_noise_rate <= 1.0):
            raise ValueError("boundary_noise_rate must lie in [0, 1]")


@dataclass
class Box:
    center: tuple   # (x, y, z) meters
    size: tuple     # (l, w, h) meters

    @property
    def lo(self):
        return np.array(self.center) - np.array(self.size) / 2

    @property
    def hi(self):
        return np.array(self.center) + np.array(self.size) / 2


@dataclass
class Scene:
    lidar: SparsePointCloud
    virtual: SparsePointCloud
    noise_labels: np.ndarray   # bool per virtual point
    boxes: list
    spec: SyntheticSceneSpec
    seed: int


def synthetic_calibration() -> Calibration:
    """Pinhole camera co-located with the sensor, optical axis along +x."""
    P = np.array(
        [
            [FOCAL, 0.0, IMAGE_W / 2.0, 0.0],
            [0.0, FOCAL, IMAGE_H / 2.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    lidar_to_cam = np.array(
        [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]]
    )
    return Calibration(cam_projection=P, rect=np.eye(3), lidar_to_cam=lidar_to_cam)


def _place_boxes(spec: SyntheticSceneSpec, rng: SeededRng):
    boxes = []
    for _ in range(spec.num_objects):
        for _attempt in range(200):
            size = rng.gen.uniform(spec.size_min, spec.size_max)
            cx = rng.gen.uniform(*spec.x_range)
            cy = rng.gen.uniform(*spec.y_range)
            cz = spec.ground_z + size[2] / 2
            cand = Box(center=(cx, cy, cz), size=tuple(size))
            margin = 0.8
            ok = all(
                np.any(np.abs(np.array(cand.center[:2]) - np.array(b.center[:2]))
                       > (np.array(cand.size[:2]) + np.array(b.size[:2])) / 2 + margin)
                for b in boxes
            )
            if ok:
                boxes.append(cand)
                break
        else:
            raise RuntimeError(
                f"could not place box {len(boxes) + 1}/{spec.num_objects} "
                "without overlap; loosen the scene spec"
            )
    return boxes


def _sample_face(lo, hi, fixed_axis, fixed_value, count, rng):
    pts = rng.gen.uniform(lo, hi, size=(count, 3))
    pts[:, fixed_axis] = fixed_value
    return pts


def _lidar_points(spec: SyntheticSceneSpec, boxes, rng: SeededRng):
    chunks = []
    for b in boxes:
        lo, hi = b.lo, b.hi
        r = float(np.linalg.norm(b.center))
        scale = spec.lidar_density * (10.0 / max(r, 1.0)) ** 2
        # Faces visible from the origin: the near-x face, the top, and the
        # near-y face on whichever side faces the sensor.
        faces = [
            (0, lo[0], b.size[1] * b.size[2]),
            (2, hi[2], b.size[0] * b.size[1]),
            (1, lo[1] if b.center[1] > 0 else hi[1], b.size[0] * b.size[2]),
        ]
        for axis, value, area in faces:
            count = max(1, int(rng.gen.poisson(scale * area)))
            chunks.append(_sample_face(lo, hi, axis, value, count, rng))
    # Sparse ground return ring.
    n_ground = 60 * len(boxes)
    gx = rng.gen.uniform(3.0, 60.0, n_ground)
    gy = rng.gen.uniform(-30.0, 30.0, n_ground)
    ground = np.stack([gx, gy, np.full(n_ground, spec.ground_z)], axis=1)
    chunks.append(ground)
    xyz = np.concatenate(chunks, axis=0)
    alpha = rng.gen.uniform(0.1, 0.9, len(xyz))
    return SparsePointCloud.from_xyz(xyz, alpha=alpha, beta=0.0)


def _ray_dirs(us, vs):
    """Unnormalized LiDAR-frame ray directions with unit forward component."""
    cx, cy = IMAGE_W / 2.0, IMAGE_H / 2.0
    return np.stack(
        [np.ones_like(us), -(us - cx) / FOCAL, -(vs - cy) / FOCAL], axis=1
    )


def _ray_box_enter(dirs, box: Box):
    """Slab-method entry depth (in forward-x units) per ray; inf if missed."""
    lo, hi = box.lo, box.hi
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / dirs
        t2 = hi / dirs
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    enter = tmin.max(axis=1)
    exit_ = tmax.min(axis=1)
    hit = (enter <= exit_) & (exit_ > 0)
    return np.where(hit & (enter > 0.2), enter, np.inf)


def _instance_map(boxes):
    """Per-pixel nearest instance id (-1 background) and entry depth."""
    us, vs = np.meshgrid(np.arange(IMAGE_W) + 0.5, np.arange(IMAGE_H) + 0.5)
    dirs = _ray_dirs(us.ravel(), vs.ravel())
    depth = np.full(len(dirs), np.inf)
    ids = np.full(len(dirs), -1, dtype=np.int64)
    for i, b in enumerate(boxes):
        t = _ray_box_enter(dirs, b)
        closer = t < depth
        depth[closer] = t[closer]
        ids[closer] = i
    return ids.reshape(IMAGE_H, IMAGE_W), depth.reshape(IMAGE_H, IMAGE_W)


def _shifted(a: np.ndarray, dv: int, du: int, fill) -> np.ndarray:
    """out[v, u] = a[v + dv, u + du], padded with `fill`."""
    h, w = a.shape
    out = np.full_like(a, fill)
    ys, xs = slice(max(dv, 0), h + min(dv, 0)), slice(max(du, 0), w + min(du, 0))
    yt, xt = slice(max(-dv, 0), h + min(-dv, 0)), slice(max(-du, 0), w + min(-du, 0))
    out[yt, xt] = a[ys, xs]
    return out


def silhouette_boundary(ids: np.ndarray, band: int = BOUNDARY_BAND_PX) -> np.ndarray:
    """Instance pixels within `band` pixels of a different-id pixel."""
    edge = np.zeros_like(ids, dtype=bool)
    occupied = ids >= 0
    for du in range(-band, band + 1):
        for dv in range(-band, band + 1):
            if du == 0 and dv == 0:
                continue
            edge |= occupied & (_shifted(ids, dv, du, -2) != ids)
    return edge


_FIELD_CELL_PX = 24


def _smooth_field(us, vs, rng: SeededRng):
    """Low-frequency random field over the image, bilinearly interpolated,
    values roughly in [-1, 1]."""
    gw = IMAGE_W // _FIELD_CELL_PX + 2
    gh = IMAGE_H // _FIELD_CELL_PX + 2
    grid = rng.gen.uniform(-1.0, 1.0, size=(gh, gw))
    gu = np.clip(us / _FIELD_CELL_PX, 0, gw - 1.001)
    gv = np.clip(vs / _FIELD_CELL_PX, 0, gh - 1.001)
    u0 = gu.astype(np.int64)
    v0 = gv.astype(np.int64)
    fu, fv = gu - u0, gv - v0
    return (
        grid[v0, u0] * (1 - fu) * (1 - fv)
        + grid[v0, u0 + 1] * fu * (1 - fv)
        + grid[v0 + 1, u0] * (1 - fu) * fv
        + grid[v0 + 1, u0 + 1] * fu * fv
    )


def _virtual_points(spec: SyntheticSceneSpec, boxes, rng: SeededRng):
    ids, _ = _instance_map(boxes)
    boundary = silhouette_boundary(ids)
    vv, uu = np.nonzero(ids >= 0)
    if len(uu) == 0:
        return SparsePointCloud.empty(), np.zeros(0, dtype=bool)
    mult = spec.virtual_multiplier
    n_samples = int(np.floor(mult))
    frac = mult - n_samples
    reps = np.full(len(uu), n_samples, dtype=np.int64)
    if frac > 0:
        reps += rng.gen.random(len(uu)) < frac
    keep = reps > 0
    uu, vv, reps = uu[keep], vv[keep], reps[keep]
    pu = np.repeat(uu, reps).astype(np.float64)
    pv = np.repeat(vv, reps).astype(np.float64)
    pid = np.repeat(ids[vv, uu], reps)
    on_boundary = np.repeat(boundary[vv, uu], reps)
    # Jitter sub-pixel so supersampled rays differ.
    pu += rng.gen.uniform(-0.5, 0.5, len(pu)) + 0.5
    pv += rng.gen.uniform(-0.5, 0.5, len(pv)) + 0.5
    dirs = _ray_dirs(pu, pv)
    t = np.full(len(dirs), np.inf)
    for i, b in enumerate(boxes):
        sel = pid == i
        if sel.any():
            t[sel] = _ray_box_enter(dirs[sel], boxes[i])
    hit = np.isfinite(t)
    dirs, t, on_boundary = dirs[hit], t[hit], on_boundary[hit]
    pu, pv = pu[hit], pv[hit]
    noise = on_boundary & (rng.gen.random(len(t)) < spec.boundary_noise_rate)
    # Depth-completion error is spatially correlated: neighboring boundary
    # pixels smear by similar depths, so displaced points form coherent
    # sheets that look like plausible geometry in 3D.
    delta = _smooth_field(pu, pv, rng) * spec.noise_magnitude
    t = np.where(noise, np.maximum(t + delta, 0.5), t)
    xyz = dirs * t[:, None]
    cloud = SparsePointCloud.from_xyz(xyz, alpha=None, beta=1.0)
    return cloud, noise


def generate_scene(spec: SyntheticSceneSpec, rng: SeededRng) -> Scene:
    boxes = _place_boxes(spec, rng)
    lidar = _lidar_points(spec, boxes, rng)
    virtual, noise = _virtual_points(spec, boxes, rng)
    return Scene(
        lidar=lidar, virtual=virtual, noise_labels=noise, boxes=boxes,
        spec=spec, seed=rng.seed,
    )


def save_scene(scene: Scene, out_dir):
    """One directory per scene: lidar.bin, virtual.bin, calib.txt,
    labels.json, meta.json."""
    os.makedirs(out_dir, exist_ok=True)
    write_point_bin(os.path.join(out_dir, "lidar.bin"), scene.lidar)
    write_point_bin(os.path.join(out_dir, "virtual.bin"), scene.virtual)
    write_kitti_calib(os.path.join(out_dir, "calib.txt"), synthetic_calibration())
    with open(os.path.join(out_dir, "labels.json"), "w") as f:
        json.dump(
            {
                "noise": scene.noise_labels.astype(int).tolist(),
                "boxes": [
                    {"center": list(b.center), "size": list(b.size)}
                    for b in scene.boxes
                ],
            },
            f,
        )
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump({"spec": asdict(scene.spec), "seed": scene.seed}, f)


def load_scene(scene_dir) -> Scene:
    lidar = read_velodyne_bin(os.path.join(scene_dir, "lidar.bin"))
    virtual = read_virtual_bin(os.path.join(scene_dir, "virtual.bin"))
    with open(os.path.join(scene_dir, "labels.json")) as f:
        labels = json.load(f)
    with open(os.path.join(scene_dir, "meta.json")) as f:
        meta = json.load(f)
    spec = SyntheticSceneSpec(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in meta["spec"].items()
    })
    boxes = [Box(center=tuple(b["center"]), size=tuple(b["size"])) for b in labels["boxes"]]
    return Scene(
        lidar=lidar,
        virtual=virtual,
        noise_labels=np.array(labels["noise"], dtype=bool),
        boxes=boxes,
        spec=spec,
        seed=meta["seed"],
    )


def load_scene_calib(scene_dir) -> Calibration:
    return parse_kitti_calib(os.path.join(scene_dir, "calib.txt"))
