"""Blessed configurations: the workspace-scale default and the desk-scale
setups the verification suites run at.

Desk scale trades workspace size for runtime: a 32^3 scene at 1 cm, two
refinement levels, rotation hierarchy levels 0 -> 1, and a fixture task whose
pocket basin is unimodal by construction.  The seed diversity (top_k) covers
near-tied coarse rotation branches; 12 seeds keep the full search more than
an order of magnitude cheaper than the exhaustive sweep.
"""

from __future__ import annotations

from .c2f import C2FConfig
from .synth import TaskSpec
from .voxel import GridGeometry, centered_geometry


def default_config() -> C2FConfig:
    """Workspace-scale search: 24^3 coarse cells, rotation levels 1..3."""
    return C2FConfig()


def default_workspace() -> GridGeometry:
    """96^3 voxels at 1 cm, centered on the origin."""
    return centered_geometry((96, 96, 96), 0.01)


def desk_config(top_k: int = 20) -> C2FConfig:
    return C2FConfig(
        levels=2,
        coarse_dims=(16, 16, 16),
        rotation_levels=(0, 1),
        top_k=top_k,
    )


def desk_task_spec(family: str = "l_block_cavity", **overrides) -> TaskSpec:
    """Random-pose fixture task solvable at the desk-scale grid resolution."""
    params = dict(
        family=family,
        scene_dims=(32, 32, 32),
        voxel_size=0.01,
        inhand_dims=(16, 16, 16),
        levels=2,
        max_translation=0.03,
        collision_penalty=1.0,
        contact_shell_radius=5,
        clearance_voxels=2,
        margin_voxels=40,
        template_scale=2,
    )
    params.update(overrides)
    return TaskSpec(**params)


def sized_task_spec(scene_edge: int, family: str = "l_block_cavity") -> TaskSpec:
    """Desk-style task scaled to a cubic scene of the given edge length."""
    scale = max(1, scene_edge // 16)
    return desk_task_spec(
        family,
        scene_dims=(scene_edge,) * 3,
        inhand_dims=(scene_edge // 2,) * 3,
        template_scale=scale,
        clearance_voxels=scale,
        contact_shell_radius=2 * scale + 1,
        max_translation=0.03 * scene_edge / 32.0,
    )


def desk_lattice_task_spec(family: str = "l_block_cavity", **overrides) -> TaskSpec:
    """Desk task whose poses land exactly on the fine pose grid."""
    params = dict(rotation_grid_level=1, lattice_exact=True, max_rotation_deg=0.0)
    params.update(overrides)
    return desk_task_spec(family, **params)


def cube_task_spec(family: str = "l_block_cavity", **overrides) -> TaskSpec:
    """Tight-pocket fixture on the cube-rotation lattice: unique exact optimum.

    For exact-equivariance and augmentation-identity checks with the
    24-rotation cube grid.  The solid fills the scene (the pocket is the only
    free region), otherwise an object hugging an exterior edge of a finite
    box ties the pocket score exactly.
    """
    params = dict(
        family=family,
        scene_dims=(32, 32, 32),
        voxel_size=0.01,
        inhand_dims=(16, 16, 16),
        levels=2,
        max_translation=0.05,
        lattice_exact=True,
        collision_penalty=4.0,
        contact_shell_radius=2,
        clearance_voxels=0,
        margin_voxels=40,
        template_scale=1,
    )
    params.update(overrides)
    return TaskSpec(**params)
