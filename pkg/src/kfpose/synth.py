"""Procedural tasks with analytically known optimal poses.

Each instance carves a tight cavity, shaped like the in-hand object, out of a
solid receptacle.  The deterministic featurizer scores free voxels next to
solid ones +1 (contact shell), solid voxels -penalty, and everything else 0,
so a collision-free perfect fit maximizes the correlation by construction.
Object templates are polyomino extrusions with a notch that kills every
nontrivial cube-group self-symmetry; all cross sections are at most two
voxels thick so a snug cavity lies entirely inside the contact shell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .augment import random_capped_quat
from .geometry import RigidTransform, compose
from .so3grid import RotationGrid, cube_group, cube_group_matrices
from .voxel import GridGeometry, VoxelGrid, build_pyramid, centered_geometry, resample

FAMILIES = ("peg_in_hole", "l_block_cavity", "gripper_reach")


def _peg_template() -> np.ndarray:
    # 3 x 3 x 5 post with a foot flange on one side: no two axes look alike
    occ = np.zeros((5, 3, 5), dtype=bool)
    occ[:, :, 0:3] = True  # post
    occ[0:2, :, 3:5] = True  # flange along +x at the bottom
    occ[4, 0:2, 0] = False  # notch the top edge
    return occ


def _l_block_template() -> np.ndarray:
    # arms of different lengths AND widths: no diagonal-swap twin survives
    # pooling (an equal-width L is just a square minus a corner, which is
    # symmetric under a 180-degree diagonal rotation)
    occ = np.zeros((3, 5, 6), dtype=bool)
    occ[:, 0:2, 0:6] = True  # long arm along x, 2 wide
    occ[:, 2:5, 0:3] = True  # short arm along y, 3 wide
    occ[1:3, 0:2, 4:6] = False  # step the long-arm tip down to one layer
    return occ


def _gripper_template() -> np.ndarray:
    occ = np.zeros((5, 3, 6), dtype=bool)
    occ[0:2, :, :] = True  # palm
    occ[2:5, :, 0:2] = True  # finger
    occ[2:5, :, 4:6] = True  # finger, shortened below
    occ[4, :, 4:6] = False  # unequal finger lengths
    occ[1, 0:2, 5] = False  # notch one palm corner
    return occ


_TEMPLATES = {
    "peg_in_hole": _peg_template,
    "l_block_cavity": _l_block_template,
    "gripper_reach": _gripper_template,
}


def allows_inhand_augmentation(family: str) -> bool:
    """Families whose in-hand content is the bare gripper keep g2 = identity."""
    return family != "gripper_reach"


@dataclass(frozen=True)
class TaskSpec:
    family: str = "l_block_cavity"
    scene_dims: tuple[int, int, int] = (32, 32, 32)
    voxel_size: float = 0.01
    inhand_dims: tuple[int, int, int] = (16, 16, 16)
    levels: int = 2
    max_translation: float = 0.05  # meters, cavity center offset from scene center
    max_rotation_deg: float = 180.0  # config files and CLI carry degrees
    lattice_exact: bool = False
    rotation_grid_level: int | None = None  # draw the pose rotation from this hierarchy level
    collision_penalty: float = 10.0
    contact_shell_radius: int = 1
    clearance_voxels: int = 0  # cavity slack around the object
    margin_voxels: int = 2
    template_scale: int = 1  # integer upscaling of the object polyomino

    def __post_init__(self) -> None:
        object.__setattr__(self, "scene_dims", tuple(int(d) for d in self.scene_dims))
        object.__setattr__(self, "inhand_dims", tuple(int(d) for d in self.inhand_dims))
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.collision_penalty > 0:
            raise ValueError("collision_penalty must be positive")
        if self.contact_shell_radius < 1:
            raise ValueError("contact_shell_radius must be >= 1")
        step = 2 ** (self.levels - 1)
        for dims in (self.scene_dims, self.inhand_dims):
            if any(d % step for d in dims):
                raise ValueError(f"dims {dims} not divisible by {step} for {self.levels} levels")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TaskSpec keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class TaskInstance:
    scene: VoxelGrid  # occupancy
    inhand: VoxelGrid  # occupancy
    scene_pyramid: list[VoxelGrid]
    inhand_pyramid: list[VoxelGrid]
    ground_truth_pose: RigidTransform
    family: str
    seed: int | None = None


def template_volume(spec: TaskSpec) -> VoxelGrid:
    """The family's object embedded centered in the in-hand crop volume."""
    occ = _TEMPLATES[spec.family]()
    if spec.template_scale > 1:
        s = spec.template_scale
        occ = occ.repeat(s, axis=0).repeat(s, axis=1).repeat(s, axis=2)
    x, y, z = spec.inhand_dims
    data = np.zeros((1, z, y, x), dtype=np.float32)
    tz, ty, tx = occ.shape
    if tz > z or ty > y or tx > x:
        raise ValueError(f"template {occ.shape} larger than in-hand dims {spec.inhand_dims}")
    oz, oy, ox = (z - tz) // 2, (y - ty) // 2, (x - tx) // 2
    data[0, oz : oz + tz, oy : oy + ty, ox : ox + tx] = occ
    return VoxelGrid(centered_geometry(spec.inhand_dims, spec.voxel_size), data)


def dilate_l1(mask: np.ndarray, radius: int) -> np.ndarray:
    """Grow a boolean (Z, Y, X) mask by `radius` steps of 6-neighbor dilation."""
    out = mask.copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[:, :, 1:] |= out[:, :, :-1]
        grown[:, :, :-1] |= out[:, :, 1:]
        out = grown
    return out


def _shell_feature(occ: VoxelGrid, penalty: float, shell_radius: int) -> VoxelGrid:
    solid = occ.data[0] >= 0.5
    shell = dilate_l1(solid, shell_radius) & ~solid
    feat = shell.astype(np.float32) - np.float32(penalty) * solid.astype(np.float32)
    return VoxelGrid(occ.geometry, feat[None])


def featurize(
    scene_occ: VoxelGrid,
    inhand_occ: VoxelGrid,
    levels: int,
    penalty: float,
    shell_radius: int,
) -> tuple[list[VoxelGrid], list[VoxelGrid]]:
    """Occupancy-pyramid features: pool occupancy, then featurize every level.

    Scene voxels at each level: +1 in the free shell within the contact
    radius (city-block) of solid, -penalty inside solid, 0 elsewhere; a
    pooled voxel counts as solid at occupancy >= 0.5.  `shell_radius` is in
    finest-level voxels and shrinks with resolution so the physical contact
    distance stays put.  The in-hand kernel is the pooled object occupancy.
    """
    occ_pyr = build_pyramid(scene_occ, levels)
    scene_feats = [
        _shell_feature(occ, penalty, max(1, shell_radius >> (levels - 1 - i)))
        for i, occ in enumerate(occ_pyr)
    ]
    return scene_feats, build_pyramid(inhand_occ, levels)


def _lattice_rotations(max_rotation: float) -> np.ndarray:
    quats = cube_group().quats
    angles = 2.0 * np.arccos(np.clip(np.abs(quats[:, 0]), -1.0, 1.0))
    keep = quats[angles <= max_rotation + 1e-9]
    return keep if keep.shape[0] else quats[:1]


def _draw_pose(spec: TaskSpec, geom: GridGeometry, rng: np.random.Generator) -> RigidTransform:
    from .so3grid import hopf_healpix_grid

    vs = spec.voxel_size
    max_rotation = math.radians(spec.max_rotation_deg)
    if spec.rotation_grid_level is not None:
        quats = hopf_healpix_grid(spec.rotation_grid_level).quats
        q = quats[rng.integers(quats.shape[0])]
    elif spec.lattice_exact:
        choices = _lattice_rotations(max_rotation)
        q = choices[rng.integers(choices.shape[0])]
    else:
        q = random_capped_quat(rng, max_rotation)
    if spec.lattice_exact:
        reach = int(spec.max_translation / vs)
        idx = np.array(
            [rng.integers(d // 2 - reach, d // 2 + reach + 1) for d in geom.dims]
        )
        idx = np.clip(idx, 1, np.asarray(geom.dims) - 1)
        # kernel-center lattice: corners for even in-hand dims, centers for odd
        parity = np.asarray([d % 2 for d in spec.inhand_dims], dtype=float)
        t = geom.origin + (idx + 0.5 * parity) * vs
    else:
        t = geom.center + rng.uniform(-spec.max_translation, spec.max_translation, size=3)
    return RigidTransform(q, t)


def generate(spec: TaskSpec, rng) -> TaskInstance:
    """Build one solvable instance; the cavity pose is the recorded ground truth."""
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        rng = np.random.default_rng(seed)
    inhand = template_volume(spec)
    geom = centered_geometry(spec.scene_dims, spec.voxel_size)
    dims = np.asarray(spec.scene_dims)
    margin = spec.margin_voxels

    for _ in range(500):
        pose = _draw_pose(spec, geom, rng)
        placed = resample(inhand, pose, geom, "zero")
        solid_obj = placed.data[0] >= 0.5
        if not solid_obj.any():
            continue
        cavity = dilate_l1(solid_obj, spec.clearance_voxels) if spec.clearance_voxels else solid_obj
        zz, yy, xx = np.nonzero(cavity)
        lo = np.array([xx.min(), yy.min(), zz.min()])
        hi = np.array([xx.max(), yy.max(), zz.max()])
        if np.any(lo < 2) or np.any(hi > dims - 3):
            continue  # keep the pocket walls inside the scene
        lo = np.maximum(lo - margin, 0)
        hi = np.minimum(hi + margin, dims - 1)
        box = np.zeros(solid_obj.shape, dtype=bool)
        box[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1] = True
        scene_occ = VoxelGrid(geom, (box & ~cavity).astype(np.float32)[None])
        scene_pyr, inhand_pyr = featurize(
            scene_occ, inhand, spec.levels, spec.collision_penalty, spec.contact_shell_radius
        )
        return TaskInstance(scene_occ, inhand, scene_pyr, inhand_pyr, pose, spec.family, seed)
    raise RuntimeError("could not place a receptacle inside the scene; loosen the spec bounds")


def exhaustive_argmax(
    inst: TaskInstance, rotations: RotationGrid, padding: str = "zero"
) -> tuple[RigidTransform, float, int]:
    """Full fine-lattice sweep via the frequency-domain correlator."""
    from .correlate import PoseGrid, argmax, lift_correlate

    grid = PoseGrid.full(inst.scene_pyramid[-1].geometry, rotations, level=0)
    return argmax(lift_correlate(inst.scene_pyramid[-1], inst.inhand_pyramid[-1], grid, "fft", padding))


# ---------------------------------------------------------------------------
# Constructed observation pairs for segmentation labeling
# ---------------------------------------------------------------------------


@dataclass
class PairInfo:
    """Construction record for a two-frame observation: who moved, who did not."""

    object_crop_mask: np.ndarray  # bool (Z, Y, X) in the time-t crop lattice
    distractor_crop_mask: np.ndarray
    motion_rotation: np.ndarray  # integer cube matrix of v
    motion_translation_voxels: np.ndarray  # integer voxels of v
    crop_dims: tuple[int, int, int]


def make_observation_pair(
    rng: np.random.Generator,
    scene_dims=(24, 24, 24),
    voxel_size: float = 0.01,
    crop_dims=(12, 12, 12),
    motion: str = "translate",
):
    """Scene pair with a gripper-attached object and a world-static distractor.

    Everything is lattice-exact: the gripper sits on the corner lattice and
    the displacement is an integer translation and/or cube rotation, so the
    crops reproduce occupancy bit-exactly.  Returns (ObservationPair, PairInfo).
    """
    from .inhand import ObservationPair

    if motion not in ("translate", "rotate", "both"):
        raise ValueError(f"motion must be translate|rotate|both, got {motion!r}")
    sd = np.asarray(scene_dims, dtype=np.int64)
    cd = np.asarray(crop_dims, dtype=np.int64)
    vs = float(voxel_size)
    geom = centered_geometry(tuple(int(d) for d in sd), vs)

    # gripper on the corner lattice, crop fully inside the scene with slack
    slack = 3
    gvox = np.array(
        [int(rng.integers(c // 2 + slack, s - c // 2 - slack + 1)) for s, c in zip(sd, cd)]
    )
    gripper_t = RigidTransform(translation=(gvox - sd / 2.0) * vs)

    rot = np.eye(3, dtype=np.int64)
    tvox = np.zeros(3, dtype=np.int64)
    if motion in ("translate", "both"):
        while True:
            tvox = rng.integers(-3, 4, size=3)
            if np.abs(tvox).max() >= 2:
                break
    if motion in ("rotate", "both"):
        mats = cube_group_matrices()
        rot = mats[int(rng.integers(1, 24))]  # index 0 is the identity
    v = RigidTransform(_int_matrix_quat(rot), tvox * vs)
    gripper_t1 = compose(gripper_t, v)

    # object voxels in the crop lattice (gripper frame), centered template
    occ = _l_block_template()
    obj_crop = np.zeros((cd[2], cd[1], cd[0]), dtype=bool)
    tz, ty, tx = occ.shape
    oz, oy, ox = (cd[2] - tz) // 2, (cd[1] - ty) // 2, (cd[0] - tx) // 2
    obj_crop[oz : oz + tz, oy : oy + ty, ox : ox + tx] = occ

    # distractor: a small block parked in one crop corner, in world frame
    dist_crop = np.zeros_like(obj_crop)
    dist_crop[1:3, 1:3, 1:3] = True

    obj_idx = np.argwhere(obj_crop)[:, ::-1]  # (N, 3) as (x, y, z) crop indices
    dist_idx = np.argwhere(dist_crop)[:, ::-1]

    # crop index -> gripper-frame half-integer voxel coords -> world voxel index
    def crop_to_world(idx, rotate=None, shift=None):
        rel = idx + 0.5 - cd / 2.0  # gripper-frame coords in voxel units
        if rotate is not None:
            rel = rel @ rotate.T
        if shift is not None:
            rel = rel + shift
        w = rel + gvox  # world coords in voxel units (corner-lattice gripper)
        widx = np.rint(w - 0.5).astype(np.int64)
        assert np.max(np.abs(w - 0.5 - widx)) < 1e-9, "construction left the lattice"
        return widx

    if np.any(obj_crop & dist_crop):
        raise RuntimeError("pair construction placed the distractor on the object")

    obj_world_t = crop_to_world(obj_idx)
    obj_world_t1 = crop_to_world(obj_idx, rotate=rot, shift=tvox)
    dist_world = crop_to_world(dist_idx)

    def paint(*index_sets):
        data = np.zeros((1, sd[2], sd[1], sd[0]), dtype=np.float32)
        for idxs in index_sets:
            data[0, idxs[:, 2], idxs[:, 1], idxs[:, 0]] = 1.0
        return VoxelGrid(geom, data)

    for idxs in (obj_world_t, obj_world_t1, dist_world):
        if np.any(idxs < 0) or np.any(idxs >= sd):
            return make_observation_pair(rng, scene_dims, voxel_size, crop_dims, motion)

    pair = ObservationPair(paint(obj_world_t, dist_world), paint(obj_world_t1, dist_world),
                           gripper_t, gripper_t1)
    info = PairInfo(obj_crop, dist_crop, rot, np.asarray(tvox), tuple(int(d) for d in cd))
    return pair, info


def _int_matrix_quat(m: np.ndarray) -> np.ndarray:
    from .geometry import matrix_to_quat

    return matrix_to_quat(np.asarray(m, dtype=float))


def expected_pair_labels(info: PairInfo) -> np.ndarray:
    """Labels implied by a constructed pair, by exact integer set logic.

    Works entirely in the crop lattice: a point survives as "attached" when
    its crop cell is occupied again at t+1, and as "static" when its
    backward-displaced cell v^-1 x is in-crop and occupied at t+1.  Returns a
    (Z, Y, X) array over {1, 0, -1}; voxels the motion cannot disambiguate
    (including everything unoccupied) are -1.
    """
    cd = np.asarray(info.crop_dims, dtype=float)
    rot = info.motion_rotation
    tvox = info.motion_translation_voxels

    occupied_t = info.object_crop_mask | info.distractor_crop_mask
    occ1 = info.object_crop_mask.copy()  # the object keeps its gripper-frame cells
    dist_idx = np.argwhere(info.distractor_crop_mask)[:, ::-1]
    if dist_idx.size:
        rel = dist_idx + 0.5 - cd / 2.0
        moved = (rel - tvox) @ rot  # v^-1 x as a row vector
        j = np.rint(moved - 0.5 + cd / 2.0).astype(np.int64)
        keep = np.all(j >= 0, axis=1) & np.all(j < cd.astype(np.int64), axis=1)
        j = j[keep]
        occ1[j[:, 2], j[:, 1], j[:, 0]] = True

    labels = np.full(occupied_t.shape, -1.0, dtype=np.float32)
    for z, y, x in np.argwhere(occupied_t):
        rel = np.array([x + 0.5, y + 0.5, z + 0.5]) - cd / 2.0
        back = (rel - tvox) @ rot
        jb = np.rint(back - 0.5 + cd / 2.0).astype(np.int64)
        attached = bool(occ1[z, y, x])
        static = bool(
            np.all(jb >= 0) and np.all(jb < cd.astype(np.int64)) and occ1[jb[2], jb[1], jb[0]]
        )
        if attached and not static:
            labels[z, y, x] = 1.0
        elif static and not attached:
            labels[z, y, x] = 0.0
    return labels
