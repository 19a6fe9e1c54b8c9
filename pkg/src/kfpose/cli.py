"""Batch entry points: dataset generation, pose solving, verification, benchmarks.

Every subcommand emits one JSON report (stdout, or --out FILE) and exits 0 on
success, 1 when a verification or benchmark assertion fails, 2 on usage or
I/O errors.  Reports are byte-deterministic for a fixed argv and seed except
for the "timings" subtree.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, _kernels, presets, so3grid, synth, verify
from .augment import AugmentBounds, augment, sample_transform
from .c2f import C2FConfig, solve
from .errors import EngineError
from .correlate import PoseGrid, argmax, lift_correlate
from .geometry import RigidTransform
from .inhand import ObservationPair, ground_truth_mask
from .storage import (
    Manifest,
    pose_from_list,
    pose_to_list,
    read_json,
    read_manifest,
    read_volume,
    write_manifest,
    write_volume,
)
from .synth import TaskSpec, featurize
from .voxel import build_pyramid


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kfpose", description="SE(3) pose search by coarse-to-fine lift cross-correlation"
    )
    parser.add_argument("--workers", type=int, default=None,
                        help="internal parallelism cap (default: env KFT_WORKERS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--spec", help="TaskSpec JSON (optionally {'task':..., 'augment':...})")
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")

    slv = sub.add_parser("solve", help="coarse-to-fine pose search on two volumes")
    slv.add_argument("--scene", required=True)
    slv.add_argument("--inhand", required=True)
    slv.add_argument("--config", required=True, help="C2FConfig JSON")
    slv.add_argument("--out")
    slv.add_argument("--padding", choices=("zero", "circular"), default="zero")
    slv.add_argument("--raw-features", action="store_true",
                     help="treat inputs as feature volumes; skip the occupancy featurizer")
    slv.add_argument("--penalty", type=float, default=1.0)
    slv.add_argument("--shell-radius", type=int, default=5)

    ver = sub.add_parser("verify", help="run a property suite")
    ver.add_argument("--suite", required=True, choices=verify.SUITES)
    ver.add_argument("--config", help="JSON overriding suite parameters (count)")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--count", type=int)
    ver.add_argument("--out")

    ben = sub.add_parser("bench", help="timing and agreement tables")
    ben.add_argument("--config", help="C2FConfig JSON for the c2f method")
    ben.add_argument("--methods", default="direct,fft,c2f,exhaustive")
    ben.add_argument("--sizes", default="16,32", help="scene edge lengths, comma separated")
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--repeat", type=int, default=3)
    ben.add_argument("--compare-backends", action="store_true")
    ben.add_argument("--out")

    msk = sub.add_parser("mask", help="ground-truth in-hand segmentation labels")
    msk.add_argument("--pair-manifest", required=True)
    msk.add_argument("--out", required=True, help="output directory")
    msk.add_argument("--crop-dims", default="16,16,16")
    msk.add_argument("--threshold", type=float, default=0.5)
    return parser


def _load_task_spec(path: str | None) -> tuple[TaskSpec, AugmentBounds | None]:
    if path is None:
        return presets.desk_task_spec(), None
    doc = read_json(path)
    if "task" in doc:
        bounds = AugmentBounds.from_dict(doc["augment"]) if "augment" in doc else None
        return TaskSpec.from_dict(doc["task"]), bounds
    return TaskSpec.from_dict(doc), None


def _cmd_gen(args) -> tuple[dict, bool]:
    spec, bounds = _load_task_spec(args.spec)
    os.makedirs(args.out, exist_ok=True)
    records = []
    for i in range(args.count):
        seed = args.seed + i
        inst = synth.generate(spec, seed)
        sample_scene = inst.scene
        sample_inhand = inst.inhand
        action = inst.ground_truth_pose
        gripper = RigidTransform()
        augmented = False
        if bounds is not None:
            from .augment import KeyframeSample
            from .errors import ContentLossError

            rng = np.random.default_rng(seed + 1_000_003)
            for _ in range(100):
                g1 = sample_transform(rng, bounds)
                g2 = (RigidTransform() if not synth.allows_inhand_augmentation(spec.family)
                      else sample_transform(rng, bounds))
                try:
                    aug = augment(KeyframeSample(inst.scene, inst.inhand, action), g1, g2)
                except ContentLossError:
                    continue
                sample_scene, sample_inhand, action = aug.scene, aug.inhand, aug.action_pose
                gripper = aug.gripper_pose
                augmented = True
                break
        scene_file = f"sample_{i:05d}_scene.kfvol"
        inhand_file = f"sample_{i:05d}_inhand.kfvol"
        write_volume(sample_scene, os.path.join(args.out, scene_file))
        write_volume(sample_inhand, os.path.join(args.out, inhand_file))
        record = {
            "scene": scene_file,
            "inhand": inhand_file,
            "action_pose": pose_to_list(action),
            "gripper_pose": pose_to_list(gripper),
            "gripper_open": True,
            "ignore_collision": False,
            "timestep": 0,
            "gripper_aperture": 0.0,
            "family": inst.family,
            "seed": seed,
        }
        if bounds is not None:
            record["augmented"] = augmented
        records.append(record)
    write_manifest(Manifest(records), os.path.join(args.out, "manifest.jsonl"))
    report = {
        "count": args.count,
        "out": args.out,
        "spec": json.loads(spec.to_json()),
        "manifest": "manifest.jsonl",
    }
    return report, True


def _cmd_solve(args) -> tuple[dict, bool]:
    scene = read_volume(args.scene)
    inhand = read_volume(args.inhand)
    cfg = C2FConfig.from_dict(read_json(args.config))
    if args.raw_features:
        scene_pyr = build_pyramid(scene, cfg.levels)
        inhand_pyr = build_pyramid(inhand, cfg.levels)
    else:
        scene_pyr, inhand_pyr = featurize(
            scene, inhand, cfg.levels, args.penalty, args.shell_radius
        )
    result = solve(scene_pyr, inhand_pyr, cfg, args.padding)
    report = {
        "best_pose": pose_to_list(result.best_pose),
        "best_value": result.best_value,
        "evaluated_poses": result.stats["evaluated_poses"],
        "total_evaluated": result.stats["total_evaluated"],
        "full_equivalent_poses": result.stats["full_equivalent_poses"],
        "config": json.loads(cfg.to_json()),
        "per_level": [
            {
                "poses": rec.grid.n_poses,
                "best_value": rec.best_value,
                "best_pose": pose_to_list(rec.best_pose),
            }
            for rec in result.per_level
        ],
    }
    timings = {"wall_time_s": result.stats["wall_time_s"]}
    return {**report, "timings": timings}, True


def _cmd_verify(args) -> tuple[dict, bool]:
    count = args.count
    if args.config:
        doc = read_json(args.config)
        count = doc.get("count", count)
    report = verify.run_suite(args.suite, args.seed, count)
    return report, bool(report["pass"])


def _time_call(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cmd_bench(args) -> tuple[dict, bool]:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    unknown = set(methods) - {"direct", "fft", "c2f", "exhaustive"}
    if unknown:
        raise UsageError(f"unknown bench methods: {sorted(unknown)}")
    cfg = C2FConfig.from_dict(read_json(args.config)) if args.config else presets.desk_config()
    rng_seed = args.seed
    tables = []
    passed = True
    for size in sizes:
        spec = presets.sized_task_spec(size)
        local_cfg = cfg
        if cfg.coarse_dims[0] * 2 ** (cfg.levels - 1) != size:
            local_cfg = C2FConfig(
                levels=2,
                coarse_dims=(size // 2,) * 3,
                rotation_levels=(cfg.rotation_levels[0], cfg.rotation_levels[0] + 1),
                top_k=cfg.top_k,
            )
        inst = synth.generate(spec, rng_seed + size)
        scene, kern = inst.scene_pyramid[-1], inst.inhand_pyramid[-1]
        fine_rot = so3grid.hopf_healpix_grid(local_cfg.rotation_levels[-1])
        cube = so3grid.cube_group()
        row: dict = {"size": size}
        timings: dict = {}
        values = {}
        if "direct" in methods:
            grid = PoseGrid.full(scene.geometry, cube)
            timings["direct_s"] = _time_call(
                lambda: values.setdefault("direct", lift_correlate(scene, kern, grid, "direct")),
                args.repeat,
            )
        if "fft" in methods:
            grid = PoseGrid.full(scene.geometry, cube)
            timings["fft_s"] = _time_call(
                lambda: values.setdefault("fft", lift_correlate(scene, kern, grid, "fft")),
                args.repeat,
            )
        if "direct" in methods and "fft" in methods:
            a, b = values["direct"].values, values["fft"].values
            rel = float(np.abs(a - b).max() / max(1e-12, np.abs(a).max()))
            row["direct_fft_relative_gap"] = rel
            passed = passed and rel <= 1e-4
        exhaustive_result = {}
        if "exhaustive" in methods:
            grid = PoseGrid.full(scene.geometry, fine_rot)
            timings["exhaustive_s"] = _time_call(
                lambda: exhaustive_result.setdefault(
                    "map", lift_correlate(scene, kern, grid, "fft")
                ),
                args.repeat,
            )
            row["exhaustive_poses"] = grid.n_poses
        c2f_result = {}
        if "c2f" in methods:
            timings["c2f_s"] = _time_call(
                lambda: c2f_result.setdefault(
                    "res", solve(inst.scene_pyramid, inst.inhand_pyramid, local_cfg)
                ),
                args.repeat,
            )
            row["c2f_evaluated_poses"] = c2f_result["res"].stats["total_evaluated"]
        if "c2f" in methods and "exhaustive" in methods:
            epose, _, _ = argmax(exhaustive_result["map"])
            res = c2f_result["res"]
            row["c2f_matches_exhaustive"] = bool(
                np.allclose(res.best_pose.to_floats(), epose.to_floats(), atol=1e-9)
            )
            row["pose_ratio"] = row["c2f_evaluated_poses"] / row["exhaustive_poses"]
            timings["c2f_speedup"] = timings["exhaustive_s"] / timings["c2f_s"]
        tables.append({"row": row, "timings": timings})

    default_cfg = presets.default_config()
    arithmetic = {
        "final_dims": list(default_cfg.final_dims),
        "final_rotations": default_cfg.final_rotation_count,
        "full_equivalent_poses": default_cfg.full_equivalent_poses,
        "level1_poses": 24**3 * so3grid.grid_size(default_cfg.rotation_levels[0]),
        "refinement_poses_per_level": (2 * default_cfg.translation_neighborhood_radius + 1) ** 3
        * 8 * default_cfg.rotation_branch // 8 * 8,
    }
    level1 = arithmetic["level1_poses"]
    refine = (2 * default_cfg.translation_neighborhood_radius + 1) ** 3 * 8 * 8
    total = level1 + (default_cfg.levels - 1) * refine * default_cfg.top_k
    arithmetic["default_config_evaluated"] = total
    arithmetic["default_config_pose_ratio"] = total / default_cfg.full_equivalent_poses
    passed = passed and arithmetic["default_config_pose_ratio"] < 3e-4

    report = {
        "methods": methods,
        "sizes": sizes,
        "tables": [t["row"] for t in tables],
        "arithmetic": arithmetic,
        "timings": {str(t["row"]["size"]): t["timings"] for t in tables},
    }
    if args.compare_backends and _kernels.HAS_NUMBA:
        report["timings"]["backends"] = _bench_backends(args.repeat)
        report["backends_compared"] = ["numba", "numpy"]
    return report, passed


def _bench_backends(repeat: int) -> dict:
    rng = np.random.default_rng(0)
    scene = rng.standard_normal((1, 32, 32, 32)).astype(np.float32)
    kerns = rng.standard_normal((8, 1, 16, 16, 16)).astype(np.float32)
    xs = np.arange(8, 24)
    coords = rng.uniform(0, 31, size=(3, 100_000))
    out = {}
    current = _kernels.active_backend()
    try:
        for backend in ("numba", "numpy"):
            _kernels.set_backend(backend)
            _kernels.direct_correlate(scene, kerns, xs, xs, xs, False)  # warm JIT
            out[backend] = {
                "direct_corr_s": _time_call(
                    lambda: _kernels.direct_correlate(scene, kerns, xs, xs, xs, False), repeat
                ),
                "trilinear_s": _time_call(
                    lambda: _kernels.trilinear_gather(scene, coords[0], coords[1], coords[2], False),
                    repeat,
                ),
            }
    finally:
        _kernels.set_backend(current)
    return out


def _cmd_mask(args) -> tuple[dict, bool]:
    crop_dims = tuple(int(v) for v in args.crop_dims.split(","))
    if len(crop_dims) != 3:
        raise UsageError("--crop-dims needs three comma-separated integers")
    manifest = read_manifest(args.pair_manifest,
                             required=("scene_t", "scene_t1", "gripper_pose_t", "gripper_pose_t1"))
    base = os.path.dirname(os.path.abspath(args.pair_manifest))
    os.makedirs(args.out, exist_ok=True)
    records = []
    for i, rec in enumerate(manifest.records):
        pair = ObservationPair(
            read_volume(os.path.join(base, rec["scene_t"])),
            read_volume(os.path.join(base, rec["scene_t1"])),
            pose_from_list(rec["gripper_pose_t"]),
            pose_from_list(rec["gripper_pose_t1"]),
        )
        labels = ground_truth_mask(pair, crop_dims, args.threshold)
        name = f"labels_{i:05d}.kfvol"
        write_volume(labels, os.path.join(args.out, name))
        counts = {
            "attached": int((labels.data == 1.0).sum()),
            "static": int((labels.data == 0.0).sum()),
            "undetermined": int((labels.data == -1.0).sum()),
        }
        records.append({**{k: rec[k] for k in rec}, "labels": name, "label_counts": counts})
    write_manifest(Manifest(records), os.path.join(args.out, "manifest.jsonl"))
    return {"pairs": len(records), "out": args.out, "crop_dims": list(crop_dims)}, True


_COMMANDS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
    "mask": _cmd_mask,
}


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.workers is not None:
        _kernels.set_workers(args.workers)
    try:
        payload, passed = _COMMANDS[args.command](args)
    except (EngineError, UsageError, OSError, ValueError, KeyError) as e:
        report = {
            "command": args.command,
            "engine_version": __version__,
            "error": f"{type(e).__name__}: {e}",
        }
        print(json.dumps(report, sort_keys=True, indent=2))
        return 2
    report = {
        "command": args.command,
        "engine_version": __version__,
        "seed": getattr(args, "seed", None),
        "workers": _kernels.workers(),
        "backend": _kernels.active_backend(),
        "pass": passed,
        **payload,
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    out = getattr(args, "out", None)
    if out and args.command != "gen" and args.command != "mask":
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0 if passed else 1


def main() -> None:  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
