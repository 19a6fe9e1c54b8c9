"""Lift cross-correlation: one scalar action value per (translation, rotation) pose.

The value of pose g = (t, r) is the inner product of the scene field with the
kernel field rotated by r about its own geometric center and placed with that
center at translation cell t.  Kernel voxel m aligns with scene voxel
t + m - K//2 along each axis; with zero padding only overlapping voxels
contribute, with circular padding indices wrap.

Two routes compute the same numbers: a direct per-pose dot product (exact,
good for small pose sets) and a frequency-domain path (one scene FFT plus one
FFT/inverse-FFT per rotation, good for full translation sweeps).
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

from . import _kernels
from .errors import GeometryMismatchError
from .geometry import RigidTransform, quats_to_matrices
from .so3grid import RotationGrid
from .voxel import GridGeometry, VoxelGrid, apply_cube_rotation, signed_permutation

_CUBE_SNAP = 1e-12


@dataclass(frozen=True)
class PoseGrid:
    """Translation sublattice x rotation grid at one resolution level.

    Cell (ix, iy, iz) anchors the kernel so that kernel voxel m covers scene
    voxel cell + m - K//2.  The kernel's geometric center then sits at
    origin + (cell + (K mod 2)/2) * voxel_size; `center_parity` records that
    per-axis half-voxel offset (0 for even kernels, 1 for odd).  It is set by
    lift_correlate from the kernel it was given.
    """

    geometry: GridGeometry  # scene lattice the translation cells live on
    xs: np.ndarray  # int64 voxel indices per axis, ascending
    ys: np.ndarray
    zs: np.ndarray
    rotations: RotationGrid
    level: int = 1
    center_parity: tuple[int, int, int] = (0, 0, 0)  # (x, y, z)

    def __post_init__(self) -> None:
        for name in ("xs", "ys", "zs"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            axis = {"xs": 0, "ys": 1, "zs": 2}[name]
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a non-empty 1-D index array")
            if arr.min() < 0 or arr.max() >= self.geometry.dims[axis]:
                raise ValueError(f"{name} indices outside scene dims {self.geometry.dims}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "center_parity", tuple(int(p) % 2 for p in self.center_parity))

    @classmethod
    def full(cls, geometry: GridGeometry, rotations: RotationGrid, level: int = 1) -> "PoseGrid":
        """Every translation cell of the lattice."""
        x, y, z = geometry.dims
        return cls(geometry, np.arange(x), np.arange(y), np.arange(z), rotations, level)

    @property
    def n_translations(self) -> int:
        return self.xs.size * self.ys.size * self.zs.size

    @property
    def n_poses(self) -> int:
        return self.n_translations * len(self.rotations)

    @property
    def value_shape(self) -> tuple[int, int, int, int]:
        return (len(self.rotations), self.zs.size, self.ys.size, self.xs.size)

    def translation(self, iz: int, iy: int, ix: int) -> np.ndarray:
        """World position of the kernel center for value cell (iz, iy, ix)."""
        cell = np.array([self.xs[ix], self.ys[iy], self.zs[iz]], dtype=float)
        offset = np.asarray(self.center_parity, dtype=float) * 0.5
        return self.geometry.origin + (cell + offset) * self.geometry.voxel_size

    def translation_cell(self, position) -> tuple[int, int, int]:
        """Inverse of translation(): nearest (ix, iy, iz) positions in the index arrays."""
        p = np.asarray(position, dtype=float)
        offset = np.asarray(self.center_parity, dtype=float) * 0.5
        cell = (p - self.geometry.origin) / self.geometry.voxel_size - offset
        out = []
        for axis, arr in enumerate((self.xs, self.ys, self.zs)):
            out.append(int(np.argmin(np.abs(arr - cell[axis]))))
        return out[0], out[1], out[2]

    def pose(self, r: int, iz: int, iy: int, ix: int) -> RigidTransform:
        return RigidTransform(self.rotations.quats[r], self.translation(iz, iy, ix))

    def pose_at(self, flat_index: int) -> RigidTransform:
        r, iz, iy, ix = np.unravel_index(flat_index, self.value_shape)
        return self.pose(int(r), int(iz), int(iy), int(ix))


@dataclass(frozen=True)
class ActionValueMap:
    """Scalar value per pose of a PoseGrid, indexed (rotation, z, y, x)."""

    grid: PoseGrid
    values: np.ndarray  # float32

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.shape != self.grid.value_shape:
            raise ValueError(f"values shape {values.shape} != grid shape {self.grid.value_shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("action values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def argmax(avm: ActionValueMap) -> tuple[RigidTransform, float, int]:
    """Best pose; ties resolve to the lowest linear index (rotation-major, then z, y, x)."""
    idx = int(np.argmax(avm.values))
    return avm.grid.pose_at(idx), float(avm.values.flat[idx]), idx


_ROTATED_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_ROTATED_CACHE_BYTES = 256 * 1024 * 1024


def _cache_put(key: tuple, value: np.ndarray) -> None:
    _ROTATED_CACHE[key] = value
    total = sum(v.nbytes for v in _ROTATED_CACHE.values())
    while total > _ROTATED_CACHE_BYTES and _ROTATED_CACHE:
        _, evicted = _ROTATED_CACHE.popitem(last=False)
        total -= evicted.nbytes


def rotated_kernels(f_ih: VoxelGrid, rotations: RotationGrid) -> np.ndarray:
    """Kernel field rotated about its geometric center by every grid rotation.

    Returns (R, C, KZ, KY, KX) float32.  Rotations within 1e-12 of a signed
    axis permutation use exact index shuffling; the rest are trilinear.
    Results are memoized on the kernel and rotation contents: repeated solves
    with the same in-hand volume skip the resampling entirely.
    """
    geom = f_ih.geometry
    key = (
        hashlib.sha1(f_ih.data.tobytes()).digest(),
        hashlib.sha1(rotations.quats.tobytes()).digest(),
        geom.dims,
        geom.voxel_size,
        tuple(geom.origin),
    )
    hit = _ROTATED_CACHE.get(key)
    if hit is not None:
        _ROTATED_CACHE.move_to_end(key)
        return hit
    out = _rotate_kernels_uncached(f_ih, rotations)
    out.flags.writeable = False
    _cache_put(key, out)
    return out


def _rotate_kernels_uncached(f_ih: VoxelGrid, rotations: RotationGrid) -> np.ndarray:
    x, y, z = f_ih.geometry.dims
    c = f_ih.channels
    mats = quats_to_matrices(rotations.quats)
    out = np.empty((len(rotations), c, z, y, x), dtype=np.float32)
    pending: list[int] = []
    for i in range(len(rotations)):
        rint = signed_permutation(mats[i], _CUBE_SNAP)
        if rint is not None:
            try:
                out[i] = apply_cube_rotation(f_ih.data, rint)
                continue
            except GeometryMismatchError:
                pass
        pending.append(i)
    if pending:
        center = f_ih.geometry.center
        cx = f_ih.geometry.axis_centers(0)
        cy = f_ih.geometry.axis_centers(1)
        cz = f_ih.geometry.axis_centers(2)
        zz, yy, xx = np.meshgrid(cz, cy, cx, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1) - center
        nvox = pts.shape[0]
        # chunk so the coordinate buffers stay modest
        chunk = max(1, int(8_000_000 // nvox))
        for start in range(0, len(pending), chunk):
            ids = pending[start : start + chunk]
            sample = pts[None] @ mats[ids] + center  # row vectors: p @ R == R^T p
            u = (sample.reshape(-1, 3) - f_ih.geometry.origin) / f_ih.geometry.voxel_size - 0.5
            u = np.ascontiguousarray(u.T)  # one copy; rows are contiguous views
            gathered = _kernels.trilinear_gather(f_ih.data, u[0], u[1], u[2], False)
            block = gathered.reshape(c, len(ids), z, y, x).transpose(1, 0, 2, 3, 4)
            out[ids] = block
    return out


def _validate(f_s: VoxelGrid, f_ih: VoxelGrid, grid: PoseGrid) -> None:
    if abs(f_s.geometry.voxel_size - f_ih.geometry.voxel_size) > 1e-9 * f_s.geometry.voxel_size:
        raise GeometryMismatchError(
            f"voxel size mismatch: scene {f_s.geometry.voxel_size} vs kernel {f_ih.geometry.voxel_size}"
        )
    if f_s.channels != f_ih.channels:
        raise GeometryMismatchError(f"channel mismatch: {f_s.channels} vs {f_ih.channels}")
    if any(k > s for k, s in zip(f_ih.geometry.dims, f_s.geometry.dims)):
        raise GeometryMismatchError(
            f"kernel dims {f_ih.geometry.dims} exceed scene dims {f_s.geometry.dims}"
        )
    if not grid.geometry.same_lattice(f_s.geometry):
        raise GeometryMismatchError("pose grid lattice differs from the scene lattice")


def _fft_values(
    scene: np.ndarray, kernels: np.ndarray, grid: PoseGrid, circular: bool
) -> np.ndarray:
    c, sz, sy, sx = scene.shape
    nrot, _, kz, ky, kx = kernels.shape
    if circular:
        pz, py, px = sz, sy, sx
    else:
        pz, py, px = sz + kz, sy + ky, sx + kx
    nthreads = _kernels.workers()
    pad = np.zeros((c, pz, py, px), dtype=np.float32)
    pad[:, :sz, :sy, :sx] = scene
    scene_f = sfft.rfftn(pad, axes=(1, 2, 3), workers=nthreads)

    # value at cell i reads the circular correlation at (i - K//2) mod P
    sel_z = (grid.zs - kz // 2) % pz
    sel_y = (grid.ys - ky // 2) % py
    sel_x = (grid.xs - kx // 2) % px

    out = np.empty((nrot,) + grid.value_shape[1:], dtype=np.float32)
    bytes_per_rot = c * pz * py * px * 8
    chunk = max(1, int(96_000_000 // bytes_per_rot))
    for start in range(0, nrot, chunk):
        stop = min(nrot, start + chunk)
        kpad = np.zeros((stop - start, c, pz, py, px), dtype=np.float32)
        kpad[:, :, :kz, :ky, :kx] = kernels[start:stop]
        kern_f = sfft.rfftn(kpad, axes=(2, 3, 4), workers=nthreads)
        np.conjugate(kern_f, out=kern_f)
        if c == 1:
            prod = kern_f[:, 0]
            prod *= scene_f[0]
        else:
            prod = np.einsum("rczyx,czyx->rzyx", kern_f, scene_f)
        corr = sfft.irfftn(prod, s=(pz, py, px), axes=(1, 2, 3), workers=nthreads)
        out[start:stop] = corr[:, sel_z][:, :, sel_y][:, :, :, sel_x]
    return out


def lift_correlate(
    f_s: VoxelGrid,
    f_ih: VoxelGrid,
    grid: PoseGrid,
    method: str = "direct",
    padding: str = "zero",
    precomputed_kernels: np.ndarray | None = None,
) -> ActionValueMap:
    """Score every pose of `grid` against scene features f_s with kernel f_ih.

    `precomputed_kernels` short-circuits the per-call kernel rotation when the
    caller already holds rotated_kernels(f_ih, grid.rotations); values are
    identical either way.
    """
    if method not in ("direct", "fft"):
        raise ValueError(f"method must be 'direct' or 'fft', got {method!r}")
    if padding not in ("zero", "circular"):
        raise ValueError(f"padding must be 'zero' or 'circular', got {padding!r}")
    _validate(f_s, f_ih, grid)
    circular = padding == "circular"
    if precomputed_kernels is not None:
        kernels = precomputed_kernels
        if kernels.shape != (len(grid.rotations), f_ih.channels) + f_ih.data.shape[1:]:
            raise ValueError("precomputed kernel stack does not match grid and kernel shape")
    else:
        kernels = rotated_kernels(f_ih, grid.rotations)
    if method == "fft":
        values = _fft_values(f_s.data, kernels, grid, circular)
    else:
        values = _kernels.direct_correlate(
            f_s.data, kernels, grid.xs, grid.ys, grid.zs, circular
        )
    parity = tuple(d % 2 for d in f_ih.geometry.dims)
    if grid.center_parity != parity:
        grid = replace(grid, center_parity=parity)
    return ActionValueMap(grid, values)
