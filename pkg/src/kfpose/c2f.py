"""Coarse-to-fine SE(3) search over a pose-value landscape.

Level 1 sweeps the full coarse translation lattice crossed with a coarse
rotation grid.  Each later level doubles translation resolution and steps
the rotation hierarchy one level finer, but only inside the neighborhood of
the previous level's best pose: (2*radius+1)^3 coarse cells split 2 per axis,
and the best rotation cell's 8 children (optionally the children of its grid
neighbors too).  Full sweeps go through the frequency-domain correlator;
refinement neighborhoods use the direct one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import so3grid
from .correlate import ActionValueMap, PoseGrid, argmax, lift_correlate, rotated_kernels
from .geometry import RigidTransform
from .voxel import GridGeometry, VoxelGrid

_NEIGHBORHOODS = ("children_only", "children_of_neighbors")


@dataclass(frozen=True)
class C2FConfig:
    levels: int = 3
    coarse_dims: tuple[int, int, int] = (24, 24, 24)
    rotation_levels: tuple[int, ...] = (1, 2, 3)
    translation_branch: int = 2
    rotation_branch: int = 8
    translation_neighborhood_radius: int = 1
    rotation_neighborhood: str = "children_only"
    top_k: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "coarse_dims", tuple(int(d) for d in self.coarse_dims))
        object.__setattr__(self, "rotation_levels", tuple(int(m) for m in self.rotation_levels))
        if self.levels < 1 or self.levels != len(self.rotation_levels):
            raise ValueError("levels must equal len(rotation_levels) and be >= 1")
        if any(b - a != 1 for a, b in zip(self.rotation_levels, self.rotation_levels[1:])):
            raise ValueError("rotation_levels must increase by exactly 1 per level")
        if min(self.rotation_levels) < 0:
            raise ValueError("rotation_levels must be non-negative")
        if self.translation_branch != 2 or self.rotation_branch != 8:
            raise ValueError("the hierarchy splits 2 per translation axis and 8 per rotation cell")
        if self.translation_neighborhood_radius < 0:
            raise ValueError("translation_neighborhood_radius must be >= 0")
        if self.rotation_neighborhood not in _NEIGHBORHOODS:
            raise ValueError(f"rotation_neighborhood must be one of {_NEIGHBORHOODS}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    # --- resolution arithmetic -------------------------------------------------

    @property
    def final_dims(self) -> tuple[int, int, int]:
        f = 2 ** (self.levels - 1)
        return tuple(d * f for d in self.coarse_dims)

    @property
    def final_rotation_count(self) -> int:
        return so3grid.grid_size(self.rotation_levels[-1])

    @property
    def final_yaw_spacing_deg(self) -> float:
        return 360.0 / so3grid.yaw_count(self.rotation_levels[-1])

    @property
    def full_equivalent_poses(self) -> int:
        x, y, z = self.final_dims
        return x * y * z * self.final_rotation_count

    def final_voxel_size(self, scene_voxel_size: float) -> float:
        return scene_voxel_size

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "C2FConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown C2FConfig keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "C2FConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LevelRecord:
    grid: PoseGrid
    value_map: ActionValueMap
    best_pose: RigidTransform
    best_value: float
    best_index: int


@dataclass
class C2FResult:
    best_pose: RigidTransform
    best_value: float
    per_level: list[LevelRecord]
    stats: dict = field(default_factory=dict)


def _coarse_geometry(scene_geom: GridGeometry, cfg: C2FConfig) -> GridGeometry:
    f = 2 ** (cfg.levels - 1)
    if any(d % f for d in scene_geom.dims):
        raise ValueError(f"scene dims {scene_geom.dims} not divisible by {f}")
    dims = tuple(d // f for d in scene_geom.dims)
    if dims != cfg.coarse_dims:
        raise ValueError(
            f"scene dims {scene_geom.dims} at {cfg.levels} levels give coarse dims {dims}, "
            f"config expects {cfg.coarse_dims}"
        )
    return GridGeometry(dims, scene_geom.voxel_size * f, scene_geom.origin)


def plan_level1(scene_geom: GridGeometry, cfg: C2FConfig) -> PoseGrid:
    """Full coarse translation lattice x coarse rotation grid."""
    geom = _coarse_geometry(scene_geom, cfg)
    return PoseGrid.full(geom, so3grid.hopf_healpix_grid(cfg.rotation_levels[0]), level=1)


def refine_grid(prev: PoseGrid, best: int, cfg: C2FConfig) -> PoseGrid:
    """The next level's pose neighborhood around flat index `best` of `prev`."""
    if prev.rotations.level is None or prev.rotations.indices is None:
        raise ValueError("refinement needs a hierarchical rotation grid")
    r, iz, iy, ix = np.unravel_index(int(best), prev.value_shape)
    geom = GridGeometry(
        tuple(d * 2 for d in prev.geometry.dims),
        prev.geometry.voxel_size / 2.0,
        prev.geometry.origin,
    )
    rad = cfg.translation_neighborhood_radius
    axes = []
    for cell, dim in (
        (int(prev.xs[ix]), prev.geometry.dims[0]),
        (int(prev.ys[iy]), prev.geometry.dims[1]),
        (int(prev.zs[iz]), prev.geometry.dims[2]),
    ):
        lo = max(0, cell - rad)
        hi = min(dim - 1, cell + rad)
        axes.append(np.arange(2 * lo, 2 * hi + 2))
    rot_level = prev.rotations.level
    rot_cell = int(prev.rotations.indices[r])
    kids = so3grid.refinement_neighborhood(
        rot_level, rot_cell, cfg.rotation_neighborhood == "children_of_neighbors"
    )
    rotations = so3grid.hopf_subset_grid(rot_level + 1, kids)
    return PoseGrid(geom, axes[0], axes[1], axes[2], rotations, prev.level + 1)


def _top_seeds(values: np.ndarray, k: int) -> list[int]:
    """Flat indices of the k best poses, at most one per rotation cell.

    Restricting seeds to distinct rotations spreads the refinement over the
    coarse grid's near-tied rotation branches instead of re-seeding inside
    one translation plateau.
    """
    if k == 1:
        return [int(np.argmax(values))]
    nrot = values.shape[0]
    per_rot = values.reshape(nrot, -1)
    best_cell = np.argmax(per_rot, axis=1)
    best_val = per_rot[np.arange(nrot), best_cell]
    order = np.lexsort((np.arange(nrot), -best_val))[: min(k, nrot)]
    cells = per_rot.shape[1]
    return [int(r * cells + best_cell[r]) for r in order]


def solve(
    scene_pyr: list[VoxelGrid],
    inhand_pyr: list[VoxelGrid],
    cfg: C2FConfig,
    padding: str = "zero",
) -> C2FResult:
    """Run the full coarse-to-fine search and return the best pose found."""
    if len(scene_pyr) != cfg.levels or len(inhand_pyr) != cfg.levels:
        raise ValueError(f"pyramids must have {cfg.levels} levels")
    for s, k in zip(scene_pyr, inhand_pyr):
        if abs(s.geometry.voxel_size - k.geometry.voxel_size) > 1e-9 * s.geometry.voxel_size:
            raise ValueError(
                f"pyramid voxel sizes disagree: {s.geometry.voxel_size} vs {k.geometry.voxel_size}"
            )

    counts = [0] * cfg.levels
    times = [0.0] * cfg.levels

    t0 = time.perf_counter()
    grid1 = plan_level1(scene_pyr[-1].geometry, cfg)
    if not grid1.geometry.same_lattice(scene_pyr[0].geometry):
        raise ValueError("coarsest pyramid entry does not match the configured coarse lattice")
    map1 = lift_correlate(scene_pyr[0], inhand_pyr[0], grid1, "fft", padding)
    pose1, value1, idx1 = argmax(map1)
    counts[0] = grid1.n_poses
    times[0] = time.perf_counter() - t0
    level1 = LevelRecord(grid1, map1, pose1, value1, idx1)

    seeds = _top_seeds(map1.values, cfg.top_k)
    chains = [[level1] for _ in seeds]
    frontier = [(grid1, seed) for seed in seeds]
    for level in range(2, cfg.levels + 1):
        t0 = time.perf_counter()
        grids = [refine_grid(g, idx, cfg) for g, idx in frontier]
        # one batched kernel rotation for every chain's sub-grid
        all_rot = so3grid.RotationGrid(
            "explicit", np.concatenate([g.rotations.quats for g in grids], axis=0)
        )
        stacked = rotated_kernels(inhand_pyr[level - 1], all_rot)
        offset = 0
        for ci, grid in enumerate(grids):
            nrot = len(grid.rotations)
            vmap = lift_correlate(
                scene_pyr[level - 1],
                inhand_pyr[level - 1],
                grid,
                "direct",
                padding,
                precomputed_kernels=stacked[offset : offset + nrot],
            )
            offset += nrot
            pose, value, idx = argmax(vmap)
            counts[level - 1] += grid.n_poses
            chains[ci].append(LevelRecord(grid, vmap, pose, value, idx))
            frontier[ci] = (grid, idx)
        times[level - 1] += time.perf_counter() - t0

    best_chain = chains[0]
    for chain in chains[1:]:
        if chain[-1].best_value > best_chain[-1].best_value:
            best_chain = chain

    assert best_chain is not None
    final = best_chain[-1]
    stats = {
        "evaluated_poses": counts,
        "wall_time_s": times,
        "total_evaluated": int(sum(counts)),
        "full_equivalent_poses": cfg.full_equivalent_poses,
    }
    return C2FResult(final.best_pose, final.best_value, best_chain, stats)
