"""Command-line surface.

Subcommands: forward, bench-stvd, gradcheck, synth, stvd-stats, fuse.
Exit codes: 0 success, 2 parse/file error, 3 shape or configuration error.
Every command is deterministic given (--seed, config); primary outputs embed
the seed and a config hash so fixtures self-identify. Timing columns in
bench output are the only values that vary between runs.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .bench import BenchReport, STAGE_KEYS, config_hash, run_sweep
from .geometry import (
    AugmentationRecord,
    FormatError,
    default_grid_spec,
    parse_kitti_calib,
    read_velodyne_bin,
    read_virtual_bin,
    voxelize,
    write_fused_bin,
)
from .net import NetWeights, VirConvNetSpec, fuse_early, virconvnet_forward
from .oracle import gradcheck
from .rng import SeededRng
from .scene import SyntheticSceneSpec, generate_scene, load_scene, save_scene
from .stvd import StvdConfig, bin_histogram, input_stvd
from .checkpoint import load_weights

CSV_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONFIG = 3


def _tensor_checksum(tensor) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(tensor.indices).tobytes())
    h.update(np.ascontiguousarray(tensor.features).tobytes())
    return h.hexdigest()[:16]


def _threads(args) -> int:
    if args.threads:
        return args.threads
    return int(os.environ.get("VIRCONV_THREADS", "1"))


def cmd_forward(args) -> int:
    lidar = read_velodyne_bin(args.lidar)
    virtual = read_virtual_bin(args.virtual) if args.virtual else None
    calib = parse_kitti_calib(args.calib)
    cloud = fuse_early(lidar, virtual) if virtual is not None else lidar
    spec = VirConvNetSpec.default()
    if args.weights:
        weights = load_weights(args.weights, spec)
    else:
        weights = NetWeights.initialize(spec, SeededRng(args.seed))
    cfg = StvdConfig()
    levels = virconvnet_forward(
        cloud, spec, cfg, calib, AugmentationRecord.identity(), weights,
        SeededRng(args.seed), training=False, apply_input_stvd=not args.no_stvd,
    )
    summary = {
        "schema_version": CSV_SCHEMA_VERSION,
        "seed": args.seed,
        "config_hash": config_hash(
            {"seed": args.seed, "no_stvd": args.no_stvd, "weights": args.weights or ""}
        ),
        "levels": [
            {
                "level": i + 1,
                "n": t.n,
                "width": t.width,
                "stride": t.spec.stride_level,
                "checksum": _tensor_checksum(t),
            }
            for i, t in enumerate(levels)
        ],
    }
    text = json.dumps(summary, sort_keys=True, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
        for i, t in enumerate(levels):
            with open(os.path.join(args.dump_dir, f"level{i + 1}.json"), "w") as f:
                json.dump(t.to_debug_dict(), f)
    return EXIT_OK


def cmd_bench_stvd(args) -> int:
    rates = [float(r) for r in args.sweep_rates.split(",")]
    reports = run_sweep(args.scene, rates, args.repeats, args.seed)
    lines = [
        f"# schema_version={CSV_SCHEMA_VERSION}",
        f"# seed={args.seed}",
        f"# config_hash={reports[0].config_hash}",
        "scenario,rate,keep_per_bin,voxels_before,voxels_after,"
        + ",".join(STAGE_KEYS) + ",time_ms_median,speedup",
    ]
    for r in reports:
        stage = ",".join(f"{r.stage_ms[k]:.3f}" for k in STAGE_KEYS)
        lines.append(
            f"{r.scenario},{r.rate},{r.keep_per_bin},{r.voxels_before},"
            f"{r.voxels_after},{stage},{r.time_ms_median:.3f},{r.speedup:.4f}"
        )
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = SeededRng(args.seed)
    from .conv import ActivationSpec, KernelWeights, SpconvWeights
    from .tensor import SparseVoxelTensor, VoxelGridSpec

    size = args.size
    extent = (max(size, 1), max(size, 1), max(size, 1))
    spec = VoxelGridSpec(origin=(0, 0, 0), voxel_size=(0.1, 0.1, 0.1), extent=extent)
    total = extent[0] * extent[1] * extent[2]
    n = max(1, int(0.3 * total))
    flat = rng.gen.choice(total, size=n, replace=False)
    idx = np.stack(
        [flat // (extent[1] * extent[2]), (flat // extent[2]) % extent[1],
         flat % extent[2]], axis=1,
    )
    c_in, c_out = 3, 4
    feats = rng.gen.normal(size=(n, c_in))
    tensor = SparseVoxelTensor(idx, feats, spec)
    h2d = np.stack([idx[:, 0] + idx[:, 2], idx[:, 1]], axis=1)
    act = ActivationSpec("leaky_relu", 0.1)
    if args.op == "spconv":
        weights = SpconvWeights.initialize(c_in, c_out, rng)
    else:
        weights = KernelWeights.initialize(c_in, c_out, rng)
    err = gradcheck(args.op, tensor, h2d, weights, act, rng,
                    num_probes=100, corrupt=args.corrupt)
    ok = err < 1e-4
    print(f"op={args.op} size={size} max_rel_err={err:.3e} "
          f"{'PASS' if ok else 'FAIL'} (tolerance 1e-4)")
    return EXIT_OK if ok else 1


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec) as f:
            raw = json.load(f)
        spec = SyntheticSceneSpec(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()
        })
    else:
        spec = SyntheticSceneSpec()
    scene = generate_scene(spec, SeededRng(args.seed))
    save_scene(scene, args.out)
    print(
        f"scene written to {args.out}: {scene.lidar.n} lidar points, "
        f"{scene.virtual.n} virtual points, {int(scene.noise_labels.sum())} noise-labelled"
    )
    return EXIT_OK


def cmd_stvd_stats(args) -> int:
    if args.scene:
        scene = load_scene(args.scene)
        cloud = fuse_early(scene.lidar, scene.virtual)
    else:
        lidar = read_velodyne_bin(args.lidar)
        virtual = read_virtual_bin(args.virtual) if args.virtual else None
        cloud = fuse_early(lidar, virtual) if virtual is not None else lidar
    cfg = StvdConfig(
        num_bins=args.bins,
        nearby_limit=args.nearby_limit,
        keep_per_nearby_bin=args.keep_per_bin,
        bin_range=args.bin_range,
        mode=args.mode,
    )
    tensor = voxelize(cloud, default_grid_spec())
    after = input_stvd(tensor, cfg, SeededRng(args.seed))
    before_hist = bin_histogram(tensor, cfg)
    after_hist = bin_histogram(after, cfg)
    chash = config_hash(
        {
            "bins": args.bins, "nearby_limit": args.nearby_limit,
            "keep_per_bin": args.keep_per_bin, "bin_range": args.bin_range,
            "mode": args.mode, "seed": args.seed,
        }
    )
    lines = [
        f"# schema_version={CSV_SCHEMA_VERSION}",
        f"# seed={args.seed}",
        f"# config_hash={chash}",
        "bin_index,bin_lo_m,bin_hi_m,count_before,count_after",
    ]
    for b in range(cfg.num_bins + 1):
        lo = b * cfg.bin_width
        hi = (b + 1) * cfg.bin_width if b < cfg.num_bins else float("inf")
        lines.append(f"{b},{lo},{hi},{before_hist[b]},{after_hist[b]}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fuse(args) -> int:
    lidar = read_velodyne_bin(args.lidar)
    virtual = read_virtual_bin(args.virtual)
    fused = fuse_early(lidar, virtual)
    write_fused_bin(args.out, fused)
    print(f"{fused.n} points written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="virconv")
    p.add_argument("--threads", type=int, default=0,
                   help="worker cap (falls back to VIRCONV_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="run the backbone on point cloud files")
    f.add_argument("--lidar", required=True)
    f.add_argument("--virtual")
    f.add_argument("--calib", required=True)
    f.add_argument("--weights")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--no-stvd", action="store_true")
    f.add_argument("--out")
    f.add_argument("--dump-dir")
    f.set_defaults(func=cmd_forward)

    b = sub.add_parser("bench-stvd", help="discard-rate sweep benchmark")
    b.add_argument("--scene", required=True)
    b.add_argument("--sweep-rates", default="0,0.5,0.8,0.9,0.95,0.99")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench_stvd)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--op", choices=["conv3d", "conv2d", "nrconv", "spconv"],
                   required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=6)
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="generate a synthetic scene directory")
    s.add_argument("--spec", help="JSON file of scene spec overrides")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    st = sub.add_parser("stvd-stats", help="per-bin voxel counts before/after discard")
    st.add_argument("--scene")
    st.add_argument("--lidar")
    st.add_argument("--virtual")
    st.add_argument("--bins", type=int, default=10)
    st.add_argument("--nearby-limit", type=float, default=30.0)
    st.add_argument("--keep-per-bin", type=int, default=1000)
    st.add_argument("--bin-range", type=float, default=100.0)
    st.add_argument("--mode", choices=["all_voxels", "virtual_only"],
                    default="virtual_only")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--csv")
    st.set_defaults(func=cmd_stvd_stats)

    fu = sub.add_parser("fuse", help="early-fuse lidar and virtual clouds")
    fu.add_argument("--lidar", required=True)
    fu.add_argument("--virtual", required=True)
    fu.add_argument("--out", required=True)
    fu.set_defaults(func=cmd_fuse)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "stvd-stats" and not (args.scene or args.lidar):
        print("stvd-stats needs --scene or --lidar", file=sys.stderr)
        return EXIT_PARSE
    os.environ.setdefault("VIRCONV_THREADS", str(_threads(args)))
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, FormatError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
