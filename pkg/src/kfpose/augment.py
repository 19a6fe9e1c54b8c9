"""Two-sided pose augmentation of keyframe samples.

Transforming the scene by g1 and the in-hand volume by g2 relabels the
action as g1 * a * g2^-1, so augmented samples stay self-consistent.  Draws
that push occupied mass out of a volume raise ContentLossError; the caller
redraws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContentLossError
from .geometry import RigidTransform, compose, inverse
from .so3grid import RotationGrid
from .voxel import VoxelGrid, resample

DEFAULT_MIN_RETENTION = 0.95


@dataclass(frozen=True)
class KeyframeSample:
    """One training sample: observation volumes plus the expert keyframe action."""

    scene: VoxelGrid
    inhand: VoxelGrid
    action_pose: RigidTransform
    gripper_open: bool = True
    ignore_collision: bool = False
    gripper_pose: RigidTransform = RigidTransform()
    timestep: int = 0
    gripper_aperture: float = 0.0


@dataclass(frozen=True)
class AugmentBounds:
    max_translation: float = 0.1  # meters, per axis
    max_rotation_deg: float = 45.0  # config files and CLI carry degrees
    rotation_grid: RotationGrid | None = None  # draw from this finite set instead

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentBounds":
        known = {"max_translation", "max_rotation_deg"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown AugmentBounds keys: {sorted(unknown)}")
        return cls(**doc)


def _abs_mass(v: VoxelGrid) -> float:
    return float(np.abs(v.data).sum(dtype=np.float64))


def _check_retention(
    original: VoxelGrid, kept: VoxelGrid, transform: RigidTransform, minimum: float, which: str
) -> None:
    """Compare against a wrap-around resample: identical interpolation, no
    clipping, so the ratio isolates mass pushed out of the volume."""
    total = _abs_mass(resample(original, transform, padding="circular"))
    if total <= 0.0:
        return
    ratio = _abs_mass(kept) / total
    if ratio < minimum:
        raise ContentLossError(f"{which} volume kept {ratio:.3f} < {minimum} of its mass")


def augment(
    sample: KeyframeSample,
    g1: RigidTransform,
    g2: RigidTransform,
    min_retention: float = DEFAULT_MIN_RETENTION,
) -> KeyframeSample:
    """Return the sample transformed by (g1 on the scene, g2 on the in-hand volume)."""
    scene = resample(sample.scene, g1, padding="zero")
    inhand = resample(sample.inhand, g2, padding="zero")
    _check_retention(sample.scene, scene, g1, min_retention, "scene")
    _check_retention(sample.inhand, inhand, g2, min_retention, "in-hand")
    return replace(
        sample,
        scene=scene,
        inhand=inhand,
        action_pose=compose(compose(g1, sample.action_pose), inverse(g2)),
        gripper_pose=compose(g1, sample.gripper_pose),
    )


def random_capped_quat(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    """Uniform rotation conditioned on angle <= max_angle, by rejection."""
    if max_angle <= 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    cap = min(max_angle, math.pi)
    while True:
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        if q[0] < 0.0:
            q = -q
        if 2.0 * math.acos(min(1.0, q[0])) <= cap:
            return q


def sample_transform(rng: np.random.Generator, bounds: AugmentBounds) -> RigidTransform:
    """Random transform: uniform box translation x capped-uniform (or grid) rotation."""
    if bounds.max_translation < 0.0 or bounds.max_rotation_deg < 0.0:
        raise ValueError("bounds must be non-negative")
    t = rng.uniform(-bounds.max_translation, bounds.max_translation, size=3)
    if bounds.rotation_grid is not None:
        q = bounds.rotation_grid.quats[rng.integers(len(bounds.rotation_grid))]
    else:
        q = random_capped_quat(rng, math.radians(bounds.max_rotation_deg))
    return RigidTransform(q, t)
