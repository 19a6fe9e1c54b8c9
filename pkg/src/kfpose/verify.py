"""Self-check suites behind `kfpose verify`: each returns a JSON-able report.

The oracle suite re-scores poses through a reference route (index-shuffled
kernels and per-window dot products over padded arrays) that shares no code
with the production direct or frequency-domain paths.
"""

from __future__ import annotations

import numpy as np

from . import presets, so3grid, synth
from .correlate import PoseGrid, argmax, lift_correlate
from .c2f import solve
from .geometry import RigidTransform, rotation_distance, translation_distance
from .inhand import ground_truth_mask
from .voxel import VoxelGrid, centered_geometry

SUITES = ("oracle", "equivariance", "segmentation", "c2f-agreement")


def _reference_rotate(kern: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Index-mapped rotation about the volume center (signed permutations only)."""
    c, kz, ky, kx = kern.shape
    out = np.zeros_like(kern)
    rt = mat.T
    for iz in range(kz):
        for iy in range(ky):
            for ix in range(kx):
                rel = np.array([ix + 0.5 - kx / 2, iy + 0.5 - ky / 2, iz + 0.5 - kz / 2])
                src = rt @ rel
                jx = int(round(src[0] - 0.5 + kx / 2))
                jy = int(round(src[1] - 0.5 + ky / 2))
                jz = int(round(src[2] - 0.5 + kz / 2))
                out[:, iz, iy, ix] = kern[:, jz, jy, jx]
    return out


def _reference_values(scene: np.ndarray, kern: np.ndarray, circular: bool) -> np.ndarray:
    """Per-pose window dot products for every cube rotation and every cell."""
    mats = so3grid.cube_group_matrices()
    c, sz, sy, sx = scene.shape
    _, kz, ky, kx = kern.shape
    mode = "wrap" if circular else "constant"
    pad = np.pad(scene.astype(np.float64), ((0, 0), (kz, kz), (ky, ky), (kx, kx)), mode=mode)
    win = np.lib.stride_tricks.sliding_window_view(pad, (kz, ky, kx), axis=(1, 2, 3))
    z0, y0, x0 = kz - kz // 2, ky - ky // 2, kx - kx // 2
    win = win[:, z0 : z0 + sz, y0 : y0 + sy, x0 : x0 + sx]
    out = np.empty((len(mats), sz, sy, sx), dtype=np.float64)
    for r, mat in enumerate(mats):
        krot = _reference_rotate(kern, mat).astype(np.float64)
        out[r] = np.einsum("czyxijk,cijk->zyx", win, krot)
    return out


def suite_oracle(seed: int = 0, count: int = 20) -> dict:
    """Micro tasks: direct and fft against the reference route, both paddings."""
    rng = np.random.default_rng(seed)
    sgeom = centered_geometry((8, 8, 8), 0.01)
    kgeom = centered_geometry((4, 4, 4), 0.01)
    grid = PoseGrid.full(sgeom, so3grid.cube_group())
    checks = failures = 0
    worst = {"direct": 0.0, "fft": 0.0}
    for _ in range(count):
        scene = VoxelGrid(sgeom, rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
        kern = VoxelGrid(kgeom, rng.standard_normal((2, 4, 4, 4)).astype(np.float32))
        for padding in ("zero", "circular"):
            ref = _reference_values(scene.data, kern.data, padding == "circular")
            scale = float(np.abs(ref).max())
            for method, tol in (("direct", 1e-5), ("fft", 1e-4)):
                got = lift_correlate(scene, kern, grid, method, padding).values
                err = float(np.abs(got - ref).max()) / scale
                worst[method] = max(worst[method], err)
                checks += 1
                failures += err > tol
    return {
        "suite": "oracle",
        "instances": count,
        "checks": checks,
        "failures": failures,
        "worst_relative_error": worst,
        "pass": failures == 0,
    }


def suite_equivariance(seed: int = 0, shifts: int = 10) -> dict:
    """Cube-rotation covariance of scene and kernel sides plus circular shifts.

    Rotation covariance runs through the frequency path (1e-5 value tolerance);
    the shift identity runs through the direct path, where it is bit-exact.
    """
    from .voxel import apply_cube_rotation

    rng = np.random.default_rng(seed)
    spec = presets.cube_task_spec()
    inst = synth.generate(spec, rng)
    scene = inst.scene_pyramid[-1]
    kern = inst.inhand_pyramid[-1]
    cg = so3grid.cube_group()
    mats = so3grid.cube_group_matrices()
    grid = PoseGrid.full(scene.geometry, cg)
    base = lift_correlate(scene, kern, grid, "fft", "circular").values
    tol = 1e-5 * max(1.0, float(np.abs(base).max()))

    checks = failures = 0
    dims = scene.geometry.dims
    for mat in mats:
        rot_scene = VoxelGrid(scene.geometry, apply_cube_rotation(scene.data, mat))
        got = lift_correlate(rot_scene, kern, grid, "fft", "circular").values
        checks += 1
        failures += not np.allclose(got, _permute_scene_side(base, mat, mats, dims), atol=tol)

        rot_kern = VoxelGrid(kern.geometry, apply_cube_rotation(kern.data, mat))
        got_k = lift_correlate(scene, rot_kern, grid, "fft", "circular").values
        checks += 1
        failures += not np.allclose(got_k, _permute_kernel_side(base, mat, mats), atol=tol)

    small = synth.generate(
        presets.cube_task_spec(scene_dims=(16, 16, 16), inhand_dims=(8, 8, 8),
                               max_translation=0.02), rng
    )
    s16, k8 = small.scene_pyramid[-1], small.inhand_pyramid[-1]
    grid16 = PoseGrid.full(s16.geometry, cg)
    base16 = lift_correlate(s16, k8, grid16, "direct", "circular").values
    for _ in range(shifts):
        delta = rng.integers(0, 16, size=3)  # (z, y, x) voxels
        rolled = np.roll(s16.data, delta, axis=(1, 2, 3))
        got = lift_correlate(VoxelGrid(s16.geometry, rolled), k8, grid16, "direct", "circular").values
        checks += 1
        failures += not np.array_equal(got, np.roll(base16, delta, axis=(1, 2, 3)))
    return {
        "suite": "equivariance",
        "checks": checks,
        "failures": failures,
        "pass": failures == 0,
    }


def _rotation_index(mats: np.ndarray, mat: np.ndarray) -> int:
    for i in range(mats.shape[0]):
        if np.array_equal(mats[i], mat):
            return i
    raise ValueError("rotation not in the cube group")


def _permute_scene_side(values, mat, mats, dims):
    """Values of the rho-rotated scene: Q'[g] = Q[rho^-1 g] on the cube lattice.

    Even in-hand volumes anchor pose translations on the corner lattice, so
    cells permute like the integer offsets i - n/2.
    """
    nx, ny, nz = dims
    out = np.empty_like(values)
    rt = mat.T
    ix = np.arange(nx)
    iy = np.arange(ny)
    iz = np.arange(nz)
    zz, yy, xx = np.meshgrid(iz, iy, ix, indexing="ij")
    rel = np.stack([xx - nx / 2.0, yy - ny / 2.0, zz - nz / 2.0], axis=-1)
    src = rel @ mat  # rho^-1 applied to row-vector positions
    sx = (np.rint(src[..., 0]).astype(np.int64) + nx // 2) % nx
    sy = (np.rint(src[..., 1]).astype(np.int64) + ny // 2) % ny
    sz = (np.rint(src[..., 2]).astype(np.int64) + nz // 2) % nz
    for r in range(values.shape[0]):
        src_rot = _rotation_index(mats, rt @ mats[r])
        out[r] = values[src_rot][sz, sy, sx]
    return out


def _permute_kernel_side(values, mat, mats):
    """Values with the rho-rotated kernel: Q'[(t, r)] = Q[(t, r o rho)]."""
    out = np.empty_like(values)
    for r in range(values.shape[0]):
        out[r] = values[_rotation_index(mats, mats[r] @ mat)]
    return out


def suite_segmentation(seed: int = 0, count: int = 25) -> dict:
    """Constructed pairs: disambiguated voxels labeled right, none invented."""
    rng = np.random.default_rng(seed)
    checks = failures = labeled = 0
    for i in range(count):
        motion = ("translate", "rotate", "both")[i % 3]
        pair, info = synth.make_observation_pair(rng, motion=motion)
        labels = ground_truth_mask(pair, info.crop_dims).data[0]
        expect = synth.expected_pair_labels(info)
        determined = expect >= 0
        checks += 1
        labeled += int(determined.sum())
        ok = np.array_equal(labels[determined], expect[determined]) and not np.any(
            (labels >= 0) & ~(_occupied_mask(info))
        )
        failures += not ok
    return {
        "suite": "segmentation",
        "pairs": count,
        "checks": checks,
        "failures": failures,
        "determined_voxels": labeled,
        "pass": failures == 0,
    }


def _occupied_mask(info) -> np.ndarray:
    return info.object_crop_mask | info.distractor_crop_mask


def suite_c2f_agreement(seed: int = 0, count: int = 20) -> dict:
    """Desk-scale c2f against the exhaustive fft sweep."""
    rng = np.random.default_rng(seed)
    spec = presets.desk_task_spec()
    cfg = presets.desk_config()
    fine_rotations = so3grid.hopf_healpix_grid(cfg.rotation_levels[-1])
    agree = 0
    for _ in range(count):
        inst = synth.generate(spec, rng)
        epose, _, _ = synth.exhaustive_argmax(inst, fine_rotations)
        res = solve(inst.scene_pyramid, inst.inhand_pyramid, cfg)
        agree += int(
            translation_distance(res.best_pose, epose) < 1e-9
            and rotation_distance(res.best_pose, epose) < 1e-9
        )
    fraction = agree / count
    return {
        "suite": "c2f-agreement",
        "instances": count,
        "agree": agree,
        "fraction": fraction,
        "pass": fraction >= 0.9,
    }


def run_suite(name: str, seed: int = 0, count: int | None = None) -> dict:
    if name == "oracle":
        return suite_oracle(seed, count or 20)
    if name == "equivariance":
        return suite_equivariance(seed, count or 10)
    if name == "segmentation":
        return suite_segmentation(seed, count or 25)
    if name == "c2f-agreement":
        return suite_c2f_agreement(seed, count or 20)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
