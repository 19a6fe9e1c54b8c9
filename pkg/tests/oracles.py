"""Independent reference implementations the tests check the engine against.

Nothing here shares code paths with kfpose internals: rotations go through
explicit index arithmetic, correlation through padded window dot products,
and quaternion/matrix conversions through Rodrigues' formula.
"""

import numpy as np


def rodrigues_matrix(axis, angle):
    """Rotation matrix from axis-angle via Rodrigues' formula."""
    ax = np.asarray(axis, dtype=float)
    ax = ax / np.linalg.norm(ax)
    k = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotate_indices(data, mat):
    """Rotate (C, Z, Y, X) data about its geometric center by a signed permutation.

    Voxel-by-voxel index mapping; no interpolation, no transposes.
    """
    c, nz, ny, nx = data.shape
    out = np.zeros_like(data)
    rt = np.asarray(mat).T
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                rel = np.array([ix + 0.5 - nx / 2, iy + 0.5 - ny / 2, iz + 0.5 - nz / 2])
                src = rt @ rel
                jx = int(round(src[0] - 0.5 + nx / 2))
                jy = int(round(src[1] - 0.5 + ny / 2))
                jz = int(round(src[2] - 0.5 + nz / 2))
                out[:, iz, iy, ix] = data[:, jz, jy, jx]
    return out


def pose_values(scene, kern_rotated, circular):
    """Per-pose dot products for one rotated kernel over every scene cell.

    Pose cell (x, y, z) aligns kernel voxel m with scene voxel cell + m - K//2;
    out-of-range reads are zero (or wrap when circular).  Vectorized as padded
    sliding windows, which keeps the per-pose dot-product semantics while
    staying fast enough for many instances.
    """
    c, sz, sy, sx = scene.shape
    _, kz, ky, kx = kern_rotated.shape
    mode = "wrap" if circular else "constant"
    pad = np.pad(scene.astype(np.float64), ((0, 0), (kz, kz), (ky, ky), (kx, kx)), mode=mode)
    win = np.lib.stride_tricks.sliding_window_view(pad, (kz, ky, kx), axis=(1, 2, 3))
    z0, y0, x0 = kz - kz // 2, ky - ky // 2, kx - kx // 2
    win = win[:, z0 : z0 + sz, y0 : y0 + sy, x0 : x0 + sx]
    return np.einsum("czyxijk,cijk->zyx", win, kern_rotated.astype(np.float64))


def cube_pose_values(scene, kern, mats, circular):
    """Full (rotation, z, y, x) brute-force value array over the cube group."""
    out = np.empty((len(mats),) + scene.shape[1:], dtype=np.float64)
    for r, mat in enumerate(mats):
        out[r] = pose_values(scene, rotate_indices(kern, mat), circular)
    return out


def trilinear_point(data, x, y, z, circular):
    """Scalar trilinear sample of (Z, Y, X) data at one fractional index coord."""
    nz, ny, nx = data.shape
    acc = 0.0
    x0, y0, z0 = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    fx, fy, fz = x - x0, y - y0, z - z0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                w = (fx if dx else 1 - fx) * (fy if dy else 1 - fy) * (fz if dz else 1 - fz)
                ix, iy, iz = x0 + dx, y0 + dy, z0 + dz
                if circular:
                    acc += w * data[iz % nz, iy % ny, ix % nx]
                elif 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
                    acc += w * data[iz, iy, ix]
    return acc


def capped_angle_cdf(theta, cap):
    """CDF of the rotation angle under the uniform SO(3) measure capped at `cap`."""
    theta = np.asarray(theta, dtype=float)
    full = lambda t: (t - np.sin(t)) / np.pi
    return np.clip(full(theta) / full(cap), 0.0, 1.0)
