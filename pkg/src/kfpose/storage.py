"""Bit-exact file I/O: kfvol1 volumes, JSON-lines manifests, config documents.

kfvol1 layout: one text header line `kfvol1 {json}` with keys dims [X,Y,Z],
channels, voxel_size_m, origin_m, dtype ("f32le"), then the raw payload as
little-endian float32, channel-major, then z, y, x with x fastest.  All
writers are deterministic: the same data produces the same bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .correlate import ActionValueMap, PoseGrid
from .errors import (
    DanglingReferenceError,
    MalformedHeaderError,
    ManifestError,
    TruncatedPayloadError,
    UnknownDtypeError,
)
from .geometry import RigidTransform
from .so3grid import RotationGrid
from .voxel import GridGeometry, VoxelGrid

_VOLUME_MAGIC = "kfvol1"
_MANIFEST_FORMAT = "kfpose-manifest"
MANIFEST_VERSION = 1

# manifest record keys whose string values reference files on disk
_FILE_KEYS = ("scene", "inhand", "scene_t", "scene_t1", "labels", "values")


def write_volume(v: VoxelGrid, path) -> None:
    header = {
        "dims": list(v.geometry.dims),
        "channels": v.channels,
        "voxel_size_m": v.geometry.voxel_size,
        "origin_m": list(v.geometry.origin),
        "dtype": "f32le",
    }
    line = _VOLUME_MAGIC + " " + json.dumps(header, sort_keys=True) + "\n"
    with open(path, "wb") as f:
        f.write(line.encode("ascii"))
        f.write(v.data.astype("<f4", copy=False).tobytes())


def read_volume(path) -> VoxelGrid:
    with open(path, "rb") as f:
        raw = f.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise MalformedHeaderError(f"{path}: no header line")
    try:
        text = raw[:newline].decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedHeaderError(f"{path}: header is not ascii: {e}") from e
    magic, _, doc = text.partition(" ")
    if magic != _VOLUME_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    try:
        header = json.loads(doc)
    except json.JSONDecodeError as e:
        raise MalformedHeaderError(f"{path}: header json invalid: {e}") from e
    missing = {"dims", "channels", "voxel_size_m", "origin_m", "dtype"} - set(header)
    if missing:
        raise MalformedHeaderError(f"{path}: header missing keys {sorted(missing)}")
    if header["dtype"] != "f32le":
        raise UnknownDtypeError(f"{path}: unsupported dtype {header['dtype']!r}")
    dims = tuple(int(d) for d in header["dims"])
    channels = int(header["channels"])
    expected = channels * dims[0] * dims[1] * dims[2] * 4
    payload = raw[newline + 1 :]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    data = data.reshape(channels, dims[2], dims[1], dims[0])
    geom = GridGeometry(dims, float(header["voxel_size_m"]), np.asarray(header["origin_m"], float))
    return VoxelGrid(geom, data)


# ---------------------------------------------------------------------------
# Manifests: JSON lines, header record first
# ---------------------------------------------------------------------------


@dataclass
class Manifest:
    records: list[dict] = field(default_factory=list)
    version: int = MANIFEST_VERSION


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(json.dumps({"format": _MANIFEST_FORMAT, "version": manifest.version},
                           sort_keys=True) + "\n")
        for rec in manifest.records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path, required=(), check_files: bool = True) -> Manifest:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="ascii") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: header line invalid: {e}") from e
    if head.get("format") != _MANIFEST_FORMAT or "version" not in head:
        raise ManifestError(f"{path}: not a {_MANIFEST_FORMAT} file")
    version = int(head["version"])
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unrecognized manifest version {version}")
    records = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{i}: invalid json: {e}") from e
        for key in required:
            if key not in rec:
                raise ManifestError(f"{path}:{i}: missing required key {key!r}")
        if check_files:
            for key in _FILE_KEYS:
                ref = rec.get(key)
                if isinstance(ref, str) and not os.path.exists(os.path.join(base, ref)):
                    raise DanglingReferenceError(f"{path}:{i}: {key} -> {ref} does not exist")
        records.append(rec)
    return Manifest(records, version)


def pose_to_list(t: RigidTransform) -> list[float]:
    return [float(v) for v in t.to_floats()]


def pose_from_list(values) -> RigidTransform:
    return RigidTransform.from_floats(values)


# ---------------------------------------------------------------------------
# Rotation grids and action value maps
# ---------------------------------------------------------------------------


def write_rotation_grid(grid: RotationGrid, path) -> None:
    doc = {"kind": grid.kind, "quats": grid.quats.tolist()}
    if grid.level is not None:
        doc["level"] = grid.level
    if grid.indices is not None:
        doc["indices"] = grid.indices.tolist()
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def read_rotation_grid(path) -> RotationGrid:
    with open(path, "r", encoding="ascii") as f:
        doc = json.load(f)
    indices = np.asarray(doc["indices"], dtype=np.int64) if "indices" in doc else None
    return RotationGrid(doc["kind"], np.asarray(doc["quats"], float), doc.get("level"), indices)


def write_value_map(avm: ActionValueMap, path) -> None:
    """Value map as a kfvol1 volume (one channel per rotation) plus a sidecar.

    The sidecar `<path>.meta.json` lists the rotation quaternions and the
    translation lattice.  Requires contiguous per-axis cell runs.
    """
    grid = avm.grid
    for name, arr in (("xs", grid.xs), ("ys", grid.ys), ("zs", grid.zs)):
        if arr.size > 1 and not np.array_equal(np.diff(arr), np.ones(arr.size - 1, np.int64)):
            raise ValueError(f"value-map serialization needs contiguous {name} cells")
    vs = grid.geometry.voxel_size
    origin = grid.geometry.origin + np.array([grid.xs[0], grid.ys[0], grid.zs[0]], float) * vs
    geom = GridGeometry((grid.xs.size, grid.ys.size, grid.zs.size), vs, origin)
    write_volume(VoxelGrid(geom, avm.values), path)
    meta = {
        "rotations": grid.rotations.quats.tolist(),
        "rotation_kind": grid.rotations.kind,
        "rotation_level": grid.rotations.level,
        "rotation_indices": None if grid.rotations.indices is None else grid.rotations.indices.tolist(),
        "scene_origin_m": list(grid.geometry.origin),
        "scene_dims": list(grid.geometry.dims),
        "first_cell": [int(grid.xs[0]), int(grid.ys[0]), int(grid.zs[0])],
        "level": grid.level,
        "center_parity": list(grid.center_parity),
    }
    with open(str(path) + ".meta.json", "w", encoding="ascii") as f:
        json.dump(meta, f, sort_keys=True)
        f.write("\n")


def read_value_map(path) -> ActionValueMap:
    vol = read_volume(path)
    with open(str(path) + ".meta.json", "r", encoding="ascii") as f:
        meta = json.load(f)
    indices = meta.get("rotation_indices")
    rotations = RotationGrid(
        meta["rotation_kind"],
        np.asarray(meta["rotations"], float),
        meta.get("rotation_level"),
        None if indices is None else np.asarray(indices, np.int64),
    )
    scene_geom = GridGeometry(
        tuple(meta["scene_dims"]), vol.geometry.voxel_size, np.asarray(meta["scene_origin_m"], float)
    )
    fx, fy, fz = meta["first_cell"]
    x, y, z = vol.geometry.dims
    grid = PoseGrid(
        scene_geom,
        np.arange(fx, fx + x),
        np.arange(fy, fy + y),
        np.arange(fz, fz + z),
        rotations,
        meta.get("level", 1),
        tuple(meta.get("center_parity", (0, 0, 0))),
    )
    return ActionValueMap(grid, vol.data)


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
