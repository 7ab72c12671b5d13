"""Command-line entry points: outputs, determinism hooks, and exit codes."""

import json

import numpy as np
import pytest

from virconv import SeededRng
from virconv.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARSE, main
from virconv.geometry import read_fused_bin, write_kitti_calib, write_point_bin
from virconv.scene import (
    SyntheticSceneSpec,
    generate_scene,
    save_scene,
    synthetic_calibration,
)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    spec = SyntheticSceneSpec(num_objects=3, x_range=(8.0, 30.0),
                              y_range=(-10.0, 10.0))
    save_scene(generate_scene(spec, SeededRng(11)), root / "s0")
    return root / "s0"


def run(argv):
    return main([str(a) for a in argv])


def test_synth_writes_scene_directory(tmp_path, capsys):
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps({"num_objects": 2, "x_range": [8.0, 20.0]}))
    out = tmp_path / "scene"
    assert run(["synth", "--spec", spec_file, "--seed", 5, "--out", out]) == EXIT_OK
    for f in ("lidar.bin", "virtual.bin", "calib.txt", "labels.json", "meta.json"):
        assert (out / f).exists()
    assert "virtual points" in capsys.readouterr().out


def test_forward_summary_structure(scene_dir, tmp_path, capsys):
    out = tmp_path / "summary.json"
    code = run([
        "forward", "--lidar", scene_dir / "lidar.bin",
        "--virtual", scene_dir / "virtual.bin",
        "--calib", scene_dir / "calib.txt", "--seed", 3, "--out", out,
    ])
    assert code == EXIT_OK
    summary = json.loads(out.read_text())
    levels = summary["levels"]
    assert [lv["width"] for lv in levels] == [16, 32, 64, 64]
    assert [lv["stride"] for lv in levels] == [1, 2, 4, 8]
    assert all(len(lv["checksum"]) == 16 for lv in levels)


def test_forward_dump_dir(scene_dir, tmp_path, capsys):
    dump = tmp_path / "dump"
    code = run([
        "forward", "--lidar", scene_dir / "lidar.bin",
        "--calib", scene_dir / "calib.txt", "--dump-dir", dump,
    ])
    assert code == EXIT_OK
    level1 = json.loads((dump / "level1.json").read_text())
    assert set(level1) >= {"indices", "features"}
    capsys.readouterr()


def test_missing_file_is_parse_error(tmp_path, capsys):
    code = run(["forward", "--lidar", tmp_path / "nope.bin",
                "--calib", tmp_path / "nope.txt"])
    assert code == EXIT_PARSE
    assert "error:" in capsys.readouterr().err


def test_truncated_input_is_parse_error(tmp_path, scene_dir, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 10)
    code = run(["forward", "--lidar", bad, "--calib", scene_dir / "calib.txt"])
    assert code == EXIT_PARSE
    capsys.readouterr()


def test_bad_config_is_config_error(scene_dir, capsys):
    code = run(["stvd-stats", "--scene", scene_dir, "--bins", 0])
    assert code == EXIT_CONFIG
    capsys.readouterr()


def test_stvd_stats_missing_inputs(capsys):
    assert run(["stvd-stats"]) == EXIT_PARSE
    capsys.readouterr()


def test_stvd_stats_csv_counts(scene_dir, tmp_path, capsys):
    csv = tmp_path / "stats.csv"
    code = run(["stvd-stats", "--scene", scene_dir, "--keep-per-bin", 50,
                "--csv", csv])
    assert code == EXIT_OK
    lines = csv.read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    assert lines[3] == "bin_index,bin_lo_m,bin_hi_m,count_before,count_after"
    rows = [ln.split(",") for ln in lines[4:]]
    assert len(rows) == 11
    before = sum(int(r[3]) for r in rows)
    after = sum(int(r[4]) for r in rows)
    assert 0 < after <= before
    capsys.readouterr()


def test_fuse_roundtrip(scene_dir, tmp_path, capsys):
    out = tmp_path / "fused.bin"
    code = run(["fuse", "--lidar", scene_dir / "lidar.bin",
                "--virtual", scene_dir / "virtual.bin", "--out", out])
    assert code == EXIT_OK
    fused = read_fused_bin(out)
    assert fused.n > 0
    assert set(np.unique(fused.beta)) == {0.0, 1.0}
    capsys.readouterr()


def test_gradcheck_command_passes_and_detects_corruption(capsys):
    assert run(["gradcheck", "--op", "nrconv", "--seed", 2, "--size", 5]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert run(["gradcheck", "--op", "conv3d", "--size", 5, "--corrupt"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_bench_stvd_csv(scene_dir, tmp_path):
    csv = tmp_path / "bench.csv"
    code = run(["bench-stvd", "--scene", scene_dir, "--sweep-rates", "0,0.9",
                "--repeats", 5, "--seed", 1, "--csv", csv])
    assert code == EXIT_OK
    lines = csv.read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    header = lines[3].split(",")
    assert header[:5] == ["scenario", "rate", "keep_per_bin", "voxels_before",
                          "voxels_after"]
    rows = [ln.split(",") for ln in lines[4:]]
    assert len(rows) == 2
    baseline = rows[0]
    assert float(baseline[1]) == 0.0 and float(baseline[-1]) == 1.0


def test_bench_stvd_rejects_low_repeats(scene_dir, capsys):
    code = run(["bench-stvd", "--scene", scene_dir, "--repeats", 2])
    assert code == EXIT_CONFIG
    capsys.readouterr()
