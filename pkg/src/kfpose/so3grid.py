"""Finite rotation grids: Healpix-based hierarchy and the 24-cell cube group.

The hierarchical grid crosses Healpix sphere pixels (NESTED indexing, nside =
2^level) with uniform yaw bins (6 * 2^level of them, offset by half a bin), so
level m holds 72 * 8^m rotations and every cell splits into exactly 8 children
(4 sphere children x 2 yaw halves).  Cell index = pixel * n_yaw + yaw_bin.

The cube group is the 24 signed axis permutations with determinant +1; it is
closed under composition, which makes zero-tolerance equivariance tests
possible on voxel lattices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import RigidTransform, matrix_to_quat, rotation_distance

_JRLL = np.array([2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4], dtype=np.int64)
_JPLL = np.array([1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7], dtype=np.int64)


def _compress_even_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64)
    v &= np.uint64(0x5555555555555555)
    v = (v | (v >> np.uint64(1))) & np.uint64(0x3333333333333333)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x00000000FFFFFFFF)
    return v.astype(np.int64)


def healpix_pixel_center(nside: int, pixel) -> np.ndarray:
    """Unit vector(s) at NESTED-scheme pixel centers.

    `pixel` may be a scalar or an array; returns (3,) or (N, 3).
    """
    if nside < 1 or nside & (nside - 1):
        raise ValueError(f"nside must be a positive power of two, got {nside}")
    pix = np.atleast_1d(np.asarray(pixel, dtype=np.int64))
    npix = 12 * nside * nside
    if np.any(pix < 0) or np.any(pix >= npix):
        raise IndexError(f"pixel index out of range [0, {npix})")
    order = nside.bit_length() - 1

    face = pix >> (2 * order)
    within = pix & (nside * nside - 1)
    ix = _compress_even_bits(within)
    iy = _compress_even_bits(within >> 1)

    jr = (_JRLL[face] << order) - ix - iy - 1
    nr = np.full_like(jr, nside)
    z = np.empty(jr.shape, dtype=np.float64)
    kshift = np.zeros_like(jr)

    north = jr < nside
    south = jr > 3 * nside
    equat = ~(north | south)
    fact2 = 1.0 / (3.0 * nside * nside)
    nr[north] = jr[north]
    z[north] = 1.0 - nr[north] * nr[north] * fact2
    nr[south] = 4 * nside - jr[south]
    z[south] = nr[south] * nr[south] * fact2 - 1.0
    z[equat] = (2 * nside - jr[equat]) * (2.0 / (3.0 * nside))
    kshift[equat] = (jr[equat] - nside) & 1

    num = _JPLL[face] * nr + ix - iy + 1 + kshift
    jp = np.where(num >= 0, num // 2, -((-num) // 2))  # C-style truncation
    nl4 = 4 * nside
    jp = np.where(jp > nl4, jp - nl4, jp)
    jp = np.where(jp < 1, jp + nl4, jp)
    phi = (jp - (kshift + 1) * 0.5) * (np.pi / 2.0) / nr

    sin_theta = np.sqrt(np.maximum(0.0, (1.0 - z) * (1.0 + z)))
    vec = np.stack([sin_theta * np.cos(phi), sin_theta * np.sin(phi), z], axis=1)
    return vec[0] if np.isscalar(pixel) or np.ndim(pixel) == 0 else vec


def yaw_count(level: int) -> int:
    return 6 * (1 << level)


def grid_size(level: int) -> int:
    return 72 * 8**level


def _zyz_quats(theta, phi, psi) -> np.ndarray:
    """Quaternions of Rz(phi) Ry(theta) Rz(psi), vectorized, w >= 0."""
    ct, st = np.cos(theta / 2.0), np.sin(theta / 2.0)
    q = np.stack(
        [
            ct * np.cos((phi + psi) / 2.0),
            -st * np.sin((phi - psi) / 2.0),
            st * np.cos((phi - psi) / 2.0),
            ct * np.sin((phi + psi) / 2.0),
        ],
        axis=1,
    )
    q[q[:, 0] < 0.0] *= -1.0
    return q


@lru_cache(maxsize=8)
def _level_quats(level: int) -> np.ndarray:
    nside = 1 << level
    nyaw = yaw_count(level)
    vecs = healpix_pixel_center(nside, np.arange(12 * nside * nside))
    theta = np.arccos(np.clip(vecs[:, 2], -1.0, 1.0))
    phi = np.arctan2(vecs[:, 1], vecs[:, 0])
    psi = (np.arange(nyaw) + 0.5) * (2.0 * np.pi / nyaw)
    q = _zyz_quats(
        np.repeat(theta, nyaw), np.repeat(phi, nyaw), np.tile(psi, theta.shape[0])
    )
    q.flags.writeable = False
    return q


def so3_cell(level: int, index: int) -> RigidTransform:
    """The rotation of cell `index` at hierarchy level `level`."""
    n = grid_size(level)
    if not 0 <= index < n:
        raise IndexError(f"cell index {index} out of range [0, {n})")
    return RigidTransform(_level_quats(level)[index], np.zeros(3))


def children(level: int, index: int) -> np.ndarray:
    """The 8 level+1 cells tiling cell `index`: 4 sphere children x 2 yaw halves."""
    n = grid_size(level)
    if not 0 <= index < n:
        raise IndexError(f"cell index {index} out of range [0, {n})")
    nyaw = yaw_count(level)
    pix, j = divmod(index, nyaw)
    child_yaw = yaw_count(level + 1)
    pix_children = 4 * pix + np.arange(4)
    yaw_children = np.array([2 * j, 2 * j + 1])
    return (pix_children[:, None] * child_yaw + yaw_children[None, :]).ravel()


@dataclass(frozen=True)
class RotationGrid:
    """An ordered finite set of rotations (unit quaternions, zero translation).

    Hierarchical grids carry `level` and `indices` (positions in the full
    level grid) so refinement can enumerate children; plain sets leave both
    None.
    """

    kind: str  # "hopf_healpix" | "cube24" | "explicit"
    quats: np.ndarray  # (N, 4), w >= 0
    level: int | None = None
    indices: np.ndarray | None = None

    def __post_init__(self) -> None:
        q = np.asarray(self.quats, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 4 or q.shape[0] == 0:
            raise ValueError("quats must be a non-empty (N, 4) array")
        norms = np.linalg.norm(q, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("all grid quaternions must be unit length")
        q = q.copy()
        q.flags.writeable = False
        object.__setattr__(self, "quats", q)
        if self.indices is not None:
            idx = np.ascontiguousarray(self.indices, dtype=np.int64)
            if idx.shape != (q.shape[0],):
                raise ValueError("indices must align with quats")
            idx.flags.writeable = False
            object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.quats.shape[0]

    def cell(self, index: int) -> RigidTransform:
        return RigidTransform(self.quats[index], np.zeros(3))

    @property
    def cells(self) -> list[RigidTransform]:
        return [self.cell(i) for i in range(len(self))]


def hopf_healpix_grid(level: int) -> RotationGrid:
    if level < 0:
        raise ValueError("level must be non-negative")
    quats = _level_quats(level)
    return RotationGrid("hopf_healpix", quats, level, np.arange(quats.shape[0]))


def hopf_subset_grid(level: int, indices) -> RotationGrid:
    """Some cells of a hierarchy level, remembering their positions in it."""
    indices = np.asarray(indices, dtype=np.int64)
    return RotationGrid("hopf_healpix", _level_quats(level)[indices], level, indices)


def explicit_grid(rotations) -> RotationGrid:
    quats = np.stack(
        [r.quaternion if isinstance(r, RigidTransform) else np.asarray(r, float) for r in rotations]
    )
    return RotationGrid("explicit", quats)


@lru_cache(maxsize=1)
def _cube_quats_and_mats() -> tuple[np.ndarray, np.ndarray]:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=np.int64)
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if round(np.linalg.det(m)) == 1:
                mats.append(m)
    assert len(mats) == 24
    quats = [matrix_to_quat(m.astype(float)) for m in mats]
    angles = [2.0 * math.acos(min(1.0, abs(q[0]))) for q in quats]
    order = sorted(
        range(24), key=lambda i: (round(angles[i], 12),) + tuple(np.round(quats[i], 12))
    )
    qarr = np.stack([quats[i] for i in order])
    marr = np.stack([mats[i] for i in order])
    qarr.flags.writeable = False
    marr.flags.writeable = False
    return qarr, marr


def cube_group() -> RotationGrid:
    """The 24 rotations of the axis-aligned cube (signed axis permutations)."""
    quats, _ = _cube_quats_and_mats()
    return RotationGrid("cube24", quats)


def cube_group_matrices() -> np.ndarray:
    """(24, 3, 3) integer matrices aligned with cube_group() cell order."""
    _, mats = _cube_quats_and_mats()
    return mats


def _abs_dots(quats: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.abs(quats @ np.asarray(q, dtype=np.float64))


def nearest_cell(grid: RotationGrid, rotation) -> int:
    """Index of the grid cell closest in geodesic angle; ties -> lowest index."""
    q = rotation.quaternion if isinstance(rotation, RigidTransform) else np.asarray(rotation, float)
    return int(np.argmax(_abs_dots(grid.quats, q)))


def nearest_cell_distance(grid: RotationGrid, rotation) -> tuple[int, float]:
    q = rotation.quaternion if isinstance(rotation, RigidTransform) else np.asarray(rotation, float)
    dots = _abs_dots(grid.quats, q)
    i = int(np.argmax(dots))
    return i, 2.0 * math.acos(min(1.0, float(dots[i])))


def random_quats(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternions, w >= 0."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0.0] *= -1.0
    return q


def coverage_dispersion(grid: RotationGrid, samples: int, seed: int = 0) -> float:
    """Max over random rotations of the angle to the nearest grid cell."""
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    probes = random_quats(samples, rng)
    worst = 0.0
    chunk = max(1, int(4_000_000 // max(1, len(grid))))
    for start in range(0, samples, chunk):
        dots = np.abs(probes[start : start + chunk] @ grid.quats.T)
        best = np.clip(dots.max(axis=1), -1.0, 1.0)
        worst = max(worst, float(np.max(2.0 * np.arccos(best))))
    return worst


def refinement_neighborhood(level: int, index: int, include_neighbors: bool) -> np.ndarray:
    """Child cells to search when refining `index` at `level`.

    With `include_neighbors`, also refines every cell within twice the
    parent-to-child angular radius of the chosen cell, which covers grid
    neighbors when the optimum sits near a cell boundary.
    """
    if not include_neighbors:
        return children(level, index)
    parent = so3_cell(level, index)
    kid_idx = children(level, index)
    radius = max(rotation_distance(parent, so3_cell(level + 1, int(k))) for k in kid_idx)
    quats = _level_quats(level)
    dots = np.clip(_abs_dots(quats, parent.quaternion), -1.0, 1.0)
    near = np.flatnonzero(2.0 * np.arccos(dots) <= 2.0 * radius + 1e-12)
    return np.unique(np.concatenate([children(level, int(i)) for i in near]))
