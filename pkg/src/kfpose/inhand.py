"""Self-supervised in-hand segmentation labels from consecutive observations.

A crop voxel occupied at time t is labeled 1 (attached) when its content is
rigidly fixed in the gripper frame, 0 (world-static distractor) when it is
fixed in the world frame, and -1 when the motion cannot disambiguate.  For a
gripper displacement v = T_ee^-1 T'_ee, a gripper-frame point x that is fixed
in the world appears at v^-1 x in the next crop; a point fixed in the gripper
stays at x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError
from .geometry import RigidTransform, compose, inverse
from .voxel import VoxelGrid, crop_at, elementwise_mul, resample

DEFAULT_OCCUPANCY_THRESHOLD = 0.5


@dataclass(frozen=True)
class ObservationPair:
    """Scene occupancy and gripper pose at two consecutive timesteps."""

    scene_t: VoxelGrid
    scene_t1: VoxelGrid
    gripper_pose_t: RigidTransform
    gripper_pose_t1: RigidTransform

    def __post_init__(self) -> None:
        if not self.scene_t.geometry.same_lattice(self.scene_t1.geometry):
            raise GeometryMismatchError("observation pair scenes must share geometry")

    @property
    def displacement(self) -> RigidTransform:
        """Gripper displacement v = T_ee^-1 T'_ee, recomputed on every access."""
        return compose(inverse(self.gripper_pose_t), self.gripper_pose_t1)


def ground_truth_mask(
    pair: ObservationPair,
    crop_dims,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> VoxelGrid:
    """Label crop voxels {1: attached, 0: world-static, -1: unknown/unoccupied}."""
    if pair.scene_t.channels != 1 or pair.scene_t1.channels != 1:
        raise GeometryMismatchError("segmentation labels need single-channel occupancy scenes")
    crop_t = crop_at(pair.scene_t, pair.gripper_pose_t, crop_dims)
    crop_t1 = crop_at(pair.scene_t1, pair.gripper_pose_t1, crop_dims)
    # values of the t+1 crop at v^-1 x, i.e. where world-static content went
    static_view = resample(crop_t1, pair.displacement, crop_t.geometry, "zero")

    occupied = crop_t.data[0] >= threshold
    attached = crop_t1.data[0] >= threshold
    static = static_view.data[0] >= threshold

    labels = np.full(occupied.shape, -1.0, dtype=np.float32)
    labels[occupied & attached & ~static] = 1.0
    labels[occupied & static & ~attached] = 0.0
    return VoxelGrid(crop_t.geometry, labels[None])


def apply_mask(f_ih: VoxelGrid, mask: VoxelGrid) -> VoxelGrid:
    """Zero out features wherever the mask is <= 0 (labels -1 filter like 0)."""
    gate = VoxelGrid(mask.geometry, np.maximum(mask.data, 0.0))
    return elementwise_mul(f_ih, gate)
