import json
import subprocess
import sys

import numpy as np
import pytest

from kfpose import storage, synth
from kfpose.cli import run
from kfpose.voxel import VoxelGrid, centered_geometry


def _run(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def _strip_timings(report):
    report = dict(report)
    report.pop("timings", None)
    return report


@pytest.fixture
def dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    code, report = _run(capsys, ["gen", "--count", "2", "--seed", "5", "--out", str(out)])
    assert code == 0 and report["pass"]
    return out


def test_gen_writes_dataset(dataset):
    manifest = storage.read_manifest(dataset / "manifest.jsonl")
    assert len(manifest.records) == 2
    rec = manifest.records[0]
    assert rec["family"] == "l_block_cavity"
    assert len(rec["action_pose"]) == 7
    vol = storage.read_volume(dataset / rec["scene"])
    assert vol.geometry.dims == (32, 32, 32)


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    _run(capsys, ["gen", "--count", "2", "--seed", "9", "--out", str(a)])
    _run(capsys, ["gen", "--count", "2", "--seed", "9", "--out", str(b)])
    for name in ("manifest.jsonl", "sample_00000_scene.kfvol"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_solve_roundtrip(dataset, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": 2, "coarse_dims": [16, 16, 16],
                               "rotation_levels": [0, 1], "top_k": 4}))
    rec = storage.read_manifest(dataset / "manifest.jsonl").records[0]
    code, report = _run(capsys, [
        "solve", "--scene", str(dataset / rec["scene"]),
        "--inhand", str(dataset / rec["inhand"]), "--config", str(cfg),
    ])
    assert code == 0
    assert len(report["best_pose"]) == 7
    assert report["evaluated_poses"][0] == 16**3 * 72
    # reports deterministic apart from timings
    code2, report2 = _run(capsys, [
        "solve", "--scene", str(dataset / rec["scene"]),
        "--inhand", str(dataset / rec["inhand"]), "--config", str(cfg),
    ])
    assert _strip_timings(report) == _strip_timings(report2)


def test_solve_workers_flag_does_not_change_result(dataset, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": 2, "coarse_dims": [16, 16, 16], "rotation_levels": [0, 1]}))
    rec = storage.read_manifest(dataset / "manifest.jsonl").records[0]
    argv = ["solve", "--scene", str(dataset / rec["scene"]),
            "--inhand", str(dataset / rec["inhand"]), "--config", str(cfg)]
    _, rep1 = _run(capsys, ["--workers", "1"] + argv)
    _, rep2 = _run(capsys, ["--workers", "2"] + argv)
    rep1 = _strip_timings(rep1)
    rep2 = _strip_timings(rep2)
    rep1.pop("workers"), rep2.pop("workers")
    assert rep1 == rep2


def test_solve_voxel_size_mismatch_exits_2(dataset, tmp_path, capsys):
    rec = storage.read_manifest(dataset / "manifest.jsonl").records[0]
    bad = VoxelGrid(centered_geometry((16, 16, 16), 0.02), np.zeros((1, 16, 16, 16), np.float32))
    bad_path = tmp_path / "bad.kfvol"
    storage.write_volume(bad, bad_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": 2, "coarse_dims": [16, 16, 16], "rotation_levels": [0, 1]}))
    code, report = _run(capsys, [
        "solve", "--scene", str(dataset / rec["scene"]), "--inhand", str(bad_path),
        "--config", str(cfg),
    ])
    assert code == 2
    assert "voxel size" in report["error"] or "mismatch" in report["error"]


def test_solve_unknown_config_key_exits_2(dataset, tmp_path, capsys):
    rec = storage.read_manifest(dataset / "manifest.jsonl").records[0]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": 2, "coarse_dims": [16, 16, 16],
                               "rotation_levels": [0, 1], "branchiness": 9}))
    code, report = _run(capsys, [
        "solve", "--scene", str(dataset / rec["scene"]),
        "--inhand", str(dataset / rec["inhand"]), "--config", str(cfg),
    ])
    assert code == 2 and "branchiness" in report["error"]


def test_verify_oracle_exit_codes(capsys):
    code, report = _run(capsys, ["verify", "--suite", "oracle", "--seed", "2", "--count", "3"])
    assert code == 0 and report["pass"] and report["failures"] == 0


def test_verify_report_deterministic(capsys):
    argv = ["verify", "--suite", "segmentation", "--seed", "4", "--count", "4"]
    _, a = _run(capsys, argv)
    _, b = _run(capsys, argv)
    assert _strip_timings(a) == _strip_timings(b)


def test_mask_command(tmp_path, capsys):
    rng = np.random.default_rng(8)
    records = []
    for i in range(2):
        pair, info = synth.make_observation_pair(rng, motion="translate", crop_dims=(12, 12, 12))
        st, s1 = f"pair{i}_t.kfvol", f"pair{i}_t1.kfvol"
        storage.write_volume(pair.scene_t, tmp_path / st)
        storage.write_volume(pair.scene_t1, tmp_path / s1)
        records.append({
            "scene_t": st, "scene_t1": s1,
            "gripper_pose_t": storage.pose_to_list(pair.gripper_pose_t),
            "gripper_pose_t1": storage.pose_to_list(pair.gripper_pose_t1),
        })
    manifest = tmp_path / "pairs.jsonl"
    storage.write_manifest(storage.Manifest(records), manifest)
    out = tmp_path / "labels"
    code, report = _run(capsys, [
        "mask", "--pair-manifest", str(manifest), "--out", str(out), "--crop-dims", "12,12,12",
    ])
    assert code == 0 and report["pairs"] == 2
    labels = storage.read_volume(out / "labels_00000.kfvol")
    assert set(np.unique(labels.data)).issubset({-1.0, 0.0, 1.0})
    lab_manifest = storage.read_manifest(out / "manifest.jsonl", check_files=False)
    assert lab_manifest.records[0]["label_counts"]["attached"] > 0


def test_bench_micro(tmp_path, capsys):
    code, report = _run(capsys, [
        "bench", "--methods", "direct,fft", "--sizes", "16", "--seed", "1", "--repeat", "1",
    ])
    assert code == 0
    row = report["tables"][0]
    assert row["direct_fft_relative_gap"] <= 1e-4
    assert report["arithmetic"]["default_config_pose_ratio"] < 3e-4
    assert report["arithmetic"]["full_equivalent_poses"] == 96**3 * 36864


def test_bench_compare_backends(capsys):
    code, report = _run(capsys, [
        "bench", "--methods", "fft", "--sizes", "16", "--repeat", "1", "--compare-backends",
    ])
    assert code == 0
    backends = report["timings"]["backends"]
    assert set(backends) == {"numba", "numpy"}
    for timing in backends.values():
        assert timing["direct_corr_s"] > 0 and timing["trilinear_s"] > 0


def test_gen_with_augment_bounds(tmp_path, capsys):
    spec = {
        "task": {"family": "l_block_cavity", "scene_dims": [32, 32, 32],
                 "inhand_dims": [16, 16, 16], "levels": 2, "margin_voxels": 4,
                 "template_scale": 2, "clearance_voxels": 2, "contact_shell_radius": 5,
                 "collision_penalty": 1.0},
        "augment": {"max_translation": 0.005, "max_rotation_deg": 5.0},
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "ds"
    code, report = _run(capsys, ["gen", "--spec", str(spec_path), "--count", "2",
                                 "--seed", "3", "--out", str(out)])
    assert code == 0
    manifest = storage.read_manifest(out / "manifest.jsonl")
    assert len(manifest.records) == 2
    # the augmented gripper pose reflects g1 (not identity for these bounds)
    pose = manifest.records[0]["gripper_pose"]
    assert any(abs(v) > 1e-12 for v in pose[4:]) or abs(pose[0] - 1.0) > 1e-12


def test_console_entrypoint_usage_error():
    proc = subprocess.run(
        [sys.executable, "-m", "kfpose.cli", "solve", "--scene", "x"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2  # argparse usage error
