"""Multi-channel voxel fields and their rigid-motion resampling.

Array layout is (channel, z, y, x), float32, x fastest.  Geometry pins the
field to the world: voxel (i, j, k) is centered at
origin + (i+0.5, j+0.5, k+0.5) * voxel_size.

Resampling is trilinear with a snap-to-lattice epsilon, so transforms that
map the lattice onto itself (integer-voxel translations, cube-group
rotations about the geometric center of an even-sized volume) reproduce
stored values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import GeometryMismatchError
from .geometry import RigidTransform, inverse, quat_to_matrix, rotation_about


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a voxel lattice in the world frame."""

    dims: tuple[int, int, int]  # (X, Y, Z) voxel counts
    voxel_size: float  # meters
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))  # corner of voxel (0,0,0)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three counts >= 1, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        origin = np.asarray(self.origin, dtype=float).reshape(3).copy()
        origin.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", origin)

    @property
    def center(self) -> np.ndarray:
        """Geometric center of the volume."""
        return self.origin + np.asarray(self.dims, dtype=float) * (self.voxel_size / 2.0)

    def voxel_center(self, ijk) -> np.ndarray:
        """World position of the center of voxel (i, j, k), i along x."""
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.voxel_size

    def axis_centers(self, axis: int) -> np.ndarray:
        """Per-axis voxel-center coordinates (axis 0=x, 1=y, 2=z)."""
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.voxel_size

    def same_lattice(self, other: "GridGeometry", tol: float = 1e-9) -> bool:
        return (
            self.dims == other.dims
            and abs(self.voxel_size - other.voxel_size) <= tol
            and bool(np.all(np.abs(self.origin - other.origin) <= tol))
        )


def centered_geometry(dims, voxel_size: float) -> GridGeometry:
    """Geometry whose geometric center sits at the world origin."""
    dims = tuple(int(d) for d in dims)
    origin = -np.asarray(dims, dtype=float) * voxel_size / 2.0
    return GridGeometry(dims, voxel_size, origin)


@dataclass(frozen=True)
class VoxelGrid:
    """A dense multi-channel scalar field over a GridGeometry."""

    geometry: GridGeometry
    data: np.ndarray  # (channels, Z, Y, X) float32

    def __post_init__(self) -> None:
        x, y, z = self.geometry.dims
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[1:] != (z, y, x):
            raise ValueError(f"data shape {data.shape} does not match dims (X,Y,Z)={self.geometry.dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("voxel data must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def total(self) -> float:
        return float(self.data.sum(dtype=np.float64))


def _world_to_index(geom: GridGeometry, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u = (points - geom.origin) / geom.voxel_size - 0.5
    return u[:, 0], u[:, 1], u[:, 2]


def _out_centers(geom: GridGeometry) -> np.ndarray:
    """(N, 3) voxel-center positions in z-major, x-fastest order."""
    cx = geom.axis_centers(0)
    cy = geom.axis_centers(1)
    cz = geom.axis_centers(2)
    zz, yy, xx = np.meshgrid(cz, cy, cx, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def resample(
    src: VoxelGrid,
    transform: RigidTransform,
    out_geom: GridGeometry | None = None,
    padding: str = "zero",
) -> VoxelGrid:
    """The field moved by `transform`: output(x) = src(transform^-1 x).

    `padding` is "zero" (out-of-bounds reads are 0) or "circular" (wrap).
    """
    if padding not in ("zero", "circular"):
        raise ValueError(f"padding must be 'zero' or 'circular', got {padding!r}")
    geom = out_geom if out_geom is not None else src.geometry
    inv = inverse(transform)
    pts = _out_centers(geom)
    q = pts @ inv.matrix.T + inv.translation
    ux, uy, uz = _world_to_index(src.geometry, q)
    sampled = _kernels.trilinear_gather(src.data, ux, uy, uz, padding == "circular")
    x, y, z = geom.dims
    return VoxelGrid(geom, sampled.reshape(src.channels, z, y, x))


def rotate_about_center(src: VoxelGrid, quaternion: np.ndarray, padding: str = "zero") -> VoxelGrid:
    """Rotate the field about its own geometric center, keeping its geometry."""
    return resample(src, rotation_about(quaternion, src.geometry.center), src.geometry, padding)


def crop_at(scene: VoxelGrid, gripper_pose: RigidTransform, crop_dims) -> VoxelGrid:
    """Crop the scene canonicalized to the gripper frame.

    The returned grid uses the gripper-centered geometry (origin at
    -dims*voxel_size/2), so the gripper sits at the crop's geometric center.
    Regions outside the scene read as zero.
    """
    geom = centered_geometry(crop_dims, scene.geometry.voxel_size)
    return resample(scene, inverse(gripper_pose), geom, "zero")


def downsample2(v: VoxelGrid) -> VoxelGrid:
    """2x2x2 average pooling; voxel size doubles, origin unchanged."""
    x, y, z = v.geometry.dims
    if x % 2 or y % 2 or z % 2:
        raise ValueError(f"dims {v.geometry.dims} must be even to downsample")
    c = v.channels
    pooled = (
        v.data.reshape(c, z // 2, 2, y // 2, 2, x // 2, 2)
        .mean(axis=(2, 4, 6), dtype=np.float64)
        .astype(np.float32)
    )
    geom = GridGeometry((x // 2, y // 2, z // 2), v.geometry.voxel_size * 2.0, v.geometry.origin)
    return VoxelGrid(geom, pooled)


def build_pyramid(v: VoxelGrid, levels: int) -> list[VoxelGrid]:
    """Repeatedly pooled copies, coarsest first; the last entry is `v` itself."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    step = 2 ** (levels - 1)
    if any(d % step for d in v.geometry.dims):
        raise ValueError(f"dims {v.geometry.dims} not divisible by {step}")
    pyramid = [v]
    for _ in range(levels - 1):
        pyramid.append(downsample2(pyramid[-1]))
    pyramid.reverse()
    return pyramid


def elementwise_mul(a: VoxelGrid, b: VoxelGrid) -> VoxelGrid:
    """Per-voxel product; a single-channel `b` broadcasts across a's channels."""
    if not a.geometry.same_lattice(b.geometry):
        raise GeometryMismatchError("elementwise_mul requires identical geometry")
    if b.channels not in (1, a.channels):
        raise GeometryMismatchError(
            f"channel mismatch: {a.channels} vs {b.channels} (need 1 or equal)"
        )
    return VoxelGrid(a.geometry, a.data * b.data)


# ---------------------------------------------------------------------------
# Exact lattice rotations (signed axis permutations about the volume center)
# ---------------------------------------------------------------------------


def signed_permutation(matrix: np.ndarray, tol: float = 1e-12) -> np.ndarray | None:
    """Round `matrix` to a signed permutation if within `tol`, else None."""
    r = np.rint(matrix)
    if np.max(np.abs(matrix - r)) > tol:
        return None
    r = r.astype(np.int64)
    if np.any(np.sum(np.abs(r), axis=0) != 1) or np.any(np.sum(np.abs(r), axis=1) != 1):
        return None
    if int(round(np.linalg.det(r))) != 1:
        return None
    return r


def apply_cube_rotation(data: np.ndarray, rint: np.ndarray) -> np.ndarray:
    """Rotate (C, Z, Y, X) data about its geometric center by a signed permutation.

    Pure index shuffling: bit-exact.  Requires each pair of exchanged axes to
    have equal lengths.
    """
    rt = rint.T  # input world coordinate m = sum_a rt[m, a] * output coordinate a
    dims_in = (data.shape[3], data.shape[2], data.shape[1])  # world (x, y, z)
    src_axis = [0, 0, 0]  # output world axis feeding each input world axis
    sign = [1, 1, 1]
    for m in range(3):
        a = int(np.argmax(np.abs(rt[m])))
        src_axis[m] = a
        sign[m] = int(rt[m, a])
    out = data
    for m in range(3):
        if dims_in[m] != dims_in[src_axis[m]]:
            raise GeometryMismatchError(
                f"axis lengths {dims_in} incompatible with rotation axis swap"
            )
        if sign[m] < 0:
            out = np.flip(out, axis=3 - m)
    # Input world axis m must land on output world axis src_axis[m].
    inv_map = [0, 0, 0]
    for m in range(3):
        inv_map[src_axis[m]] = m
    axes = (0,) + tuple(3 - inv_map[3 - k] for k in (1, 2, 3))
    return np.ascontiguousarray(np.transpose(out, axes))
