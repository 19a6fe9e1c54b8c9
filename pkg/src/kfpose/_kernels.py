"""Hot numeric kernels: trilinear gather and direct pose correlation.

Two interchangeable backends live here.  The numba backend JIT-compiles
tight loops; the numpy backend is a vectorized/sliced fallback that is
always available.  Selection: env var KFPOSE_BACKEND in {"numba", "numpy"}
(default numba when importable), overridable at runtime via set_backend().
Both backends must agree bit-for-bit; tests/test_kernels.py enforces it.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

    prange = range

# Samples closer than this (in voxels) to a lattice point are snapped onto it,
# which makes lattice-aligned transforms reproduce stored values bit-exactly.
SNAP = 1e-6

_VALID_BACKENDS = ("numba", "numpy")
_backend = os.environ.get("KFPOSE_BACKEND", "numba" if HAS_NUMBA else "numpy")
if _backend not in _VALID_BACKENDS:
    raise ValueError(f"KFPOSE_BACKEND must be one of {_VALID_BACKENDS}, got {_backend!r}")
if _backend == "numba" and not HAS_NUMBA:
    _backend = "numpy"

_workers = max(1, int(os.environ.get("KFT_WORKERS", os.cpu_count() or 1)))


def active_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID_BACKENDS:
        raise ValueError(f"backend must be one of {_VALID_BACKENDS}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _backend = name


def workers() -> int:
    return _workers


def set_workers(n: int) -> None:
    """Cap internal parallelism (FFT and numba threads).  Results do not depend on it."""
    global _workers
    if n < 1:
        raise ValueError("workers must be >= 1")
    _workers = n
    if HAS_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# Trilinear gather: sample a (C, Z, Y, X) field at fractional voxel coords.
# Coordinates are in voxel-center units: u == i samples voxel i exactly.
# ---------------------------------------------------------------------------


def _trilinear_numpy(data, ux, uy, uz, circular):
    c, nz, ny, nx = data.shape
    n = ux.shape[0]

    out = np.zeros((c, n), dtype=np.float64)
    idx = np.empty((3, n), dtype=np.int64)
    frac = np.empty((3, n), dtype=np.float64)
    for axis, (u, dim) in enumerate(((ux, nx), (uy, ny), (uz, nz))):
        i0 = np.floor(u).astype(np.int64)
        f = u - i0
        hi = f > 1.0 - SNAP
        i0[hi] += 1
        f[hi] = 0.0
        f[f < SNAP] = 0.0
        idx[axis] = i0
        frac[axis] = f

    data64 = data.astype(np.float64, copy=False)
    for dz in (0, 1):
        wz = frac[2] if dz else 1.0 - frac[2]
        iz = idx[2] + dz
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            iy = idx[1] + dy
            for dx in (0, 1):
                wx = frac[0] if dx else 1.0 - frac[0]
                ix = idx[0] + dx
                w = wx * wy * wz
                if circular:
                    live = w != 0.0
                    gz, gy, gx = iz % nz, iy % ny, ix % nx
                else:
                    live = (
                        (w != 0.0)
                        & (ix >= 0)
                        & (ix < nx)
                        & (iy >= 0)
                        & (iy < ny)
                        & (iz >= 0)
                        & (iz < nz)
                    )
                    gz = np.clip(iz, 0, nz - 1)
                    gy = np.clip(iy, 0, ny - 1)
                    gx = np.clip(ix, 0, nx - 1)
                vals = data64[:, gz, gy, gx]
                out += np.where(live, w, 0.0) * vals
    return out.astype(np.float32)


@njit(cache=True, parallel=True)
def _trilinear_numba(data, ux, uy, uz, circular):  # pragma: no cover - timed via dispatch
    c, nz, ny, nx = data.shape
    n = ux.shape[0]
    out = np.zeros((c, n), dtype=np.float32)
    for p in prange(n):
        x0 = int(np.floor(ux[p]))
        fx = ux[p] - x0
        if fx > 1.0 - SNAP:
            x0 += 1
            fx = 0.0
        elif fx < SNAP:
            fx = 0.0
        y0 = int(np.floor(uy[p]))
        fy = uy[p] - y0
        if fy > 1.0 - SNAP:
            y0 += 1
            fy = 0.0
        elif fy < SNAP:
            fy = 0.0
        z0 = int(np.floor(uz[p]))
        fz = uz[p] - z0
        if fz > 1.0 - SNAP:
            z0 += 1
            fz = 0.0
        elif fz < SNAP:
            fz = 0.0
        for ch in range(c):
            acc = 0.0
            for dz in range(2):
                wz = fz if dz == 1 else 1.0 - fz
                if wz == 0.0:
                    continue
                iz = z0 + dz
                for dy in range(2):
                    wy = fy if dy == 1 else 1.0 - fy
                    if wy == 0.0:
                        continue
                    iy = y0 + dy
                    for dx in range(2):
                        wx = fx if dx == 1 else 1.0 - fx
                        if wx == 0.0:
                            continue
                        ix = x0 + dx
                        if circular:
                            jz, jy, jx = iz % nz, iy % ny, ix % nx
                        else:
                            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                                continue
                            jz, jy, jx = iz, iy, ix
                        acc += wx * wy * wz * data[ch, jz, jy, jx]
            out[ch, p] = acc
    return out


def trilinear_gather(
    data: np.ndarray, ux: np.ndarray, uy: np.ndarray, uz: np.ndarray, circular: bool
) -> np.ndarray:
    """Sample `data` (C, Z, Y, X) float32 at N fractional coords, giving (C, N) float32."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    ux = np.ascontiguousarray(ux, dtype=np.float64)
    uy = np.ascontiguousarray(uy, dtype=np.float64)
    uz = np.ascontiguousarray(uz, dtype=np.float64)
    if _backend == "numba":
        return _trilinear_numba(data, ux, uy, uz, circular)
    return _trilinear_numpy(data, ux, uy, uz, circular)


# ---------------------------------------------------------------------------
# Direct pose correlation: dot each rotated kernel against the scene window
# around each translation cell.  Cell (x, y, z) aligns kernel voxel m with
# scene voxel cell + m - K//2 along each axis.
# ---------------------------------------------------------------------------


def _direct_corr_numpy(scene, kerns, xs, ys, zs, circular):
    c, sz, sy, sx = scene.shape
    nrot, _, kz, ky, kx = kerns.shape
    mode = "wrap" if circular else "constant"
    pad = np.pad(scene, ((0, 0), (kz, kz), (ky, ky), (kx, kx)), mode=mode)
    kerns64 = kerns.astype(np.float64)
    out = np.empty((nrot, zs.size, ys.size, xs.size), dtype=np.float32)
    for a, z in enumerate(zs):
        z0 = z - kz // 2 + kz
        for b, y in enumerate(ys):
            y0 = y - ky // 2 + ky
            for d, x in enumerate(xs):
                x0 = x - kx // 2 + kx
                window = pad[:, z0 : z0 + kz, y0 : y0 + ky, x0 : x0 + kx]
                out[:, a, b, d] = np.einsum("czyx,rczyx->r", window, kerns64)
    return out


@njit(cache=True, parallel=True)
def _direct_corr_numba(scene, kerns, xs, ys, zs, circular):  # pragma: no cover
    c, sz, sy, sx = scene.shape
    nrot, _, kz, ky, kx = kerns.shape
    out = np.empty((nrot, zs.size, ys.size, xs.size), dtype=np.float32)
    for job in prange(nrot * zs.size):
        r = job // zs.size
        a = job % zs.size
        kern = kerns[r]
        z0 = zs[a] - kz // 2
        for b in range(ys.size):
            y0 = ys[b] - ky // 2
            for d in range(xs.size):
                x0 = xs[d] - kx // 2
                acc = 0.0
                interior = (
                    z0 >= 0 and z0 + kz <= sz and y0 >= 0 and y0 + ky <= sy
                    and x0 >= 0 and x0 + kx <= sx
                )
                if interior:
                    for ch in range(c):
                        for iz in range(kz):
                            for iy in range(ky):
                                srow = scene[ch, z0 + iz, y0 + iy]
                                krow = kern[ch, iz, iy]
                                # float32 row partials vectorize; the f64
                                # accumulator keeps long sums stable
                                row = np.float32(0.0)
                                for ix in range(kx):
                                    row += srow[x0 + ix] * krow[ix]
                                acc += float(row)
                else:
                    # row-wise accumulation mirrors the interior path so the
                    # reduction order never depends on the window position
                    for ch in range(c):
                        for iz in range(kz):
                            wz = z0 + iz
                            if circular:
                                wz %= sz
                            elif wz < 0 or wz >= sz:
                                continue
                            for iy in range(ky):
                                wy = y0 + iy
                                if circular:
                                    wy %= sy
                                elif wy < 0 or wy >= sy:
                                    continue
                                row = np.float32(0.0)
                                for ix in range(kx):
                                    wx = x0 + ix
                                    if circular:
                                        wx %= sx
                                    elif wx < 0 or wx >= sx:
                                        continue
                                    row += scene[ch, wz, wy, wx] * kern[ch, iz, iy, ix]
                                acc += float(row)
                out[r, a, b, d] = acc
    return out


def direct_correlate(
    scene: np.ndarray,
    kerns: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    zs: np.ndarray,
    circular: bool,
) -> np.ndarray:
    """Dot a stack of rotated kernels (R, C, KZ, KY, KX) against scene windows.

    Accumulates float32 partials along x rows and float64 across rows;
    returns (R, Nz, Ny, Nx) float32.
    """
    scene = np.ascontiguousarray(scene, dtype=np.float32)
    kerns = np.ascontiguousarray(kerns, dtype=np.float32)
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    zs = np.ascontiguousarray(zs, dtype=np.int64)
    if _backend == "numba":
        return _direct_corr_numba(scene, kerns, xs, ys, zs, circular)
    return _direct_corr_numpy(scene, kerns, xs, ys, zs, circular)
