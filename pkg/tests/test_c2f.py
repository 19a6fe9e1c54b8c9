import numpy as np
import pytest

from kfpose import presets, synth
from kfpose._kernels import set_workers, workers
from kfpose.c2f import C2FConfig, plan_level1, refine_grid, solve
from kfpose.correlate import PoseGrid, argmax, lift_correlate
from kfpose.geometry import rotation_distance, translation_distance
from kfpose.so3grid import children, hopf_healpix_grid, hopf_subset_grid
from kfpose.voxel import centered_geometry


def test_config_validation():
    with pytest.raises(ValueError):
        C2FConfig(levels=2)  # rotation_levels length mismatch
    with pytest.raises(ValueError):
        C2FConfig(rotation_levels=(1, 3, 4))
    with pytest.raises(ValueError):
        C2FConfig(translation_branch=3)
    with pytest.raises(ValueError):
        C2FConfig(rotation_neighborhood="everything")
    with pytest.raises(ValueError):
        C2FConfig(top_k=0)
    cfg = C2FConfig.from_json('{"levels": 2, "coarse_dims": [16,16,16], "rotation_levels": [0,1]}')
    assert cfg.coarse_dims == (16, 16, 16)
    with pytest.raises(ValueError):
        C2FConfig.from_json('{"levels": 3, "bogus": 1}')


def test_default_resolution_arithmetic():
    cfg = C2FConfig()
    assert cfg.final_dims == (96, 96, 96)
    assert cfg.final_rotation_count == 36864
    assert cfg.final_yaw_spacing_deg == pytest.approx(7.5)
    assert cfg.full_equivalent_poses == 96**3 * 36864


def test_plan_level1_default():
    geom = presets.default_workspace()
    grid = plan_level1(geom, C2FConfig())
    assert grid.n_translations == 24**3
    assert len(grid.rotations) == 576
    assert grid.n_poses == 7_962_624
    assert grid.geometry.voxel_size == pytest.approx(0.04)
    with pytest.raises(ValueError):
        plan_level1(centered_geometry((50, 50, 50), 0.01), C2FConfig())
    with pytest.raises(ValueError):
        plan_level1(centered_geometry((64, 64, 64), 0.01), C2FConfig())  # coarse dims mismatch


def test_refine_grid_counts_and_tiling():
    geom = centered_geometry((32, 32, 32), 0.01)
    cfg = C2FConfig(levels=2, coarse_dims=(16, 16, 16), rotation_levels=(0, 1))
    grid1 = plan_level1(geom, cfg)
    best = int(np.ravel_multi_index((5, 8, 8, 8), grid1.value_shape))
    fine = refine_grid(grid1, best, cfg)
    assert fine.n_poses == 6**3 * 8 == 1728
    np.testing.assert_array_equal(fine.xs, np.arange(14, 20))
    np.testing.assert_array_equal(fine.rotations.indices, children(0, 5))
    assert fine.geometry.voxel_size == pytest.approx(0.01)

    cfg0 = C2FConfig(levels=2, coarse_dims=(16, 16, 16), rotation_levels=(0, 1),
                     translation_neighborhood_radius=0)
    minimal = refine_grid(grid1, best, cfg0)
    assert minimal.n_poses == 2**3 * 8 == 64

    corner = int(np.ravel_multi_index((3, 0, 0, 15), grid1.value_shape))
    clipped = refine_grid(grid1, corner, cfg)
    assert clipped.xs.size == 4 and clipped.zs.size == 4  # clipped at the boundary
    assert clipped.n_poses < 1728


def test_refine_requires_hierarchy():
    from kfpose.so3grid import cube_group

    geom = centered_geometry((16, 16, 16), 0.01)
    grid = PoseGrid.full(geom, cube_group())
    with pytest.raises(ValueError):
        refine_grid(grid, 0, C2FConfig(levels=2, coarse_dims=(8, 8, 8), rotation_levels=(0, 1)))


def test_levels1_degenerate_equals_single_correlate():
    spec = presets.desk_task_spec()
    inst = synth.generate(spec, 7)
    cfg = C2FConfig(levels=1, coarse_dims=(32, 32, 32), rotation_levels=(1,))
    res = solve(inst.scene_pyramid[-1:], inst.inhand_pyramid[-1:], cfg)
    grid = PoseGrid.full(inst.scene_pyramid[-1].geometry, hopf_healpix_grid(1))
    vm = lift_correlate(inst.scene_pyramid[-1], inst.inhand_pyramid[-1], grid, "fft", "zero")
    pose, value, idx = argmax(vm)
    assert res.best_value == value
    assert translation_distance(res.best_pose, pose) < 1e-12
    assert rotation_distance(res.best_pose, pose) < 1e-12
    assert res.stats["evaluated_poses"] == [grid.n_poses]


def test_solve_agrees_with_exhaustive_on_desk_instances():
    spec = presets.desk_task_spec()
    cfg = presets.desk_config()
    fine = hopf_healpix_grid(1)
    rng = np.random.default_rng(123)
    hits = 0
    for _ in range(3):
        inst = synth.generate(spec, rng)
        epose, _, _ = synth.exhaustive_argmax(inst, fine)
        res = solve(inst.scene_pyramid, inst.inhand_pyramid, cfg)
        hits += int(
            translation_distance(res.best_pose, epose) < 1e-9
            and rotation_distance(res.best_pose, epose) < 1e-9
        )
    assert hits >= 2


def test_solve_value_consistency_and_stats():
    spec = presets.desk_task_spec()
    inst = synth.generate(spec, 11)
    cfg = presets.desk_config(top_k=2)
    res = solve(inst.scene_pyramid, inst.inhand_pyramid, cfg)
    # re-evaluate the winning pose alone on the finest level
    final_grid = res.per_level[-1].grid
    r, iz, iy, ix = np.unravel_index(res.per_level[-1].best_index, final_grid.value_shape)
    single = PoseGrid(
        final_grid.geometry,
        final_grid.xs[ix : ix + 1],
        final_grid.ys[iy : iy + 1],
        final_grid.zs[iz : iz + 1],
        hopf_subset_grid(final_grid.rotations.level, final_grid.rotations.indices[r : r + 1]),
        final_grid.level,
    )
    vm = lift_correlate(inst.scene_pyramid[-1], inst.inhand_pyramid[-1], single, "direct", "zero")
    assert vm.values.ravel()[0] == pytest.approx(res.best_value, rel=1e-5)
    assert res.stats["evaluated_poses"][0] == 16**3 * 72
    assert res.stats["evaluated_poses"][1] <= 2 * 1728
    assert res.stats["total_evaluated"] == sum(res.stats["evaluated_poses"])


def test_solve_deterministic_across_runs_and_workers():
    spec = presets.desk_task_spec()
    inst = synth.generate(spec, 5)
    cfg = presets.desk_config()
    before = workers()
    try:
        set_workers(2)
        a = solve(inst.scene_pyramid, inst.inhand_pyramid, cfg)
        set_workers(1)
        b = solve(inst.scene_pyramid, inst.inhand_pyramid, cfg)
    finally:
        set_workers(before)
    assert a.best_value == b.best_value
    np.testing.assert_array_equal(a.best_pose.to_floats(), b.best_pose.to_floats())
    for ra, rb in zip(a.per_level, b.per_level):
        np.testing.assert_array_equal(ra.value_map.values, rb.value_map.values)


def test_solve_validates_pyramids():
    spec = presets.desk_task_spec()
    inst = synth.generate(spec, 3)
    cfg = presets.desk_config()
    with pytest.raises(ValueError):
        solve(inst.scene_pyramid[:1], inst.inhand_pyramid, cfg)
    bad_inhand = [inst.inhand_pyramid[1], inst.inhand_pyramid[1]]
    with pytest.raises(ValueError):
        solve(inst.scene_pyramid, bad_inhand, cfg)
