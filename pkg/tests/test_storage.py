import json

import numpy as np
import pytest

from kfpose import storage
from kfpose.correlate import ActionValueMap, PoseGrid
from kfpose.errors import (
    DanglingReferenceError,
    MalformedHeaderError,
    ManifestError,
    TruncatedPayloadError,
    UnknownDtypeError,
)
from kfpose.geometry import RigidTransform
from kfpose.so3grid import cube_group, hopf_subset_grid
from kfpose.voxel import GridGeometry, VoxelGrid, centered_geometry


def _volume(rng, dims=(16, 16, 16), channels=2):
    x, y, z = dims
    data = rng.standard_normal((channels, z, y, x)).astype(np.float32)
    return VoxelGrid(GridGeometry(dims, 0.0125, (0.03, -0.01, 0.25)), data)


def test_volume_roundtrip_bit_identical(rng, tmp_path):
    v = _volume(rng)
    path = tmp_path / "vol.kfvol"
    storage.write_volume(v, path)
    back = storage.read_volume(path)
    np.testing.assert_array_equal(back.data, v.data)
    assert back.geometry.dims == v.geometry.dims
    assert back.geometry.voxel_size == v.geometry.voxel_size
    np.testing.assert_array_equal(back.geometry.origin, v.geometry.origin)
    # same data -> same bytes
    path2 = tmp_path / "vol2.kfvol"
    storage.write_volume(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_volume_payload_is_little_endian(rng, tmp_path):
    v = _volume(rng, (2, 2, 2), 1)
    path = tmp_path / "v.kfvol"
    storage.write_volume(v, path)
    raw = path.read_bytes()
    payload = raw[raw.find(b"\n") + 1 :]
    np.testing.assert_array_equal(
        np.frombuffer(payload, "<f4").reshape(1, 2, 2, 2), v.data
    )


def test_volume_corruption_errors(rng, tmp_path):
    v = _volume(rng, (4, 4, 4), 1)
    path = tmp_path / "v.kfvol"
    storage.write_volume(v, path)
    raw = path.read_bytes()

    truncated = tmp_path / "trunc.kfvol"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(TruncatedPayloadError):
        storage.read_volume(truncated)

    overlong = tmp_path / "long.kfvol"
    overlong.write_bytes(raw + b"\x00" * 4)
    with pytest.raises(TruncatedPayloadError):
        storage.read_volume(overlong)

    bad_magic = tmp_path / "magic.kfvol"
    bad_magic.write_bytes(b"kfvol9" + raw[6:])
    with pytest.raises(MalformedHeaderError):
        storage.read_volume(bad_magic)

    newline = raw.find(b"\n")
    header = json.loads(raw[len(b"kfvol1 ") : newline])
    header["dtype"] = "f64be"
    rebuilt = b"kfvol1 " + json.dumps(header, sort_keys=True).encode() + raw[newline:]
    bad_dtype = tmp_path / "dtype.kfvol"
    bad_dtype.write_bytes(rebuilt)
    with pytest.raises(UnknownDtypeError):
        storage.read_volume(bad_dtype)

    headerless = tmp_path / "none.kfvol"
    headerless.write_bytes(b"no newline here")
    with pytest.raises(MalformedHeaderError):
        storage.read_volume(headerless)


def test_manifest_roundtrip_and_unknown_keys(tmp_path):
    path = tmp_path / "manifest.jsonl"
    storage.write_manifest(storage.Manifest([]), path)
    assert storage.read_manifest(path).records == []

    records = [
        {"family": "peg_in_hole", "seed": 3, "custom_tag": {"nested": [1, 2]},
         "action_pose": storage.pose_to_list(RigidTransform(translation=(0.125, -0.25, 1e-7)))}
    ]
    storage.write_manifest(storage.Manifest(records), path)
    back = storage.read_manifest(path)
    assert back.records == records  # unknown keys preserved exactly
    pose = storage.pose_from_list(back.records[0]["action_pose"])
    np.testing.assert_array_equal(pose.to_floats(), [1, 0, 0, 0, 0.125, -0.25, 1e-7])

    again = tmp_path / "again.jsonl"
    storage.write_manifest(back, again)
    assert path.read_bytes() == again.read_bytes()


def test_manifest_errors(rng, tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("not json\n")
    with pytest.raises(ManifestError):
        storage.read_manifest(path)

    storage.write_manifest(storage.Manifest([{"seed": 1}]), path)
    with pytest.raises(ManifestError):
        storage.read_manifest(path, required=("scene",))

    v = _volume(rng, (2, 2, 2), 1)
    storage.write_volume(v, tmp_path / "ok.kfvol")
    storage.write_manifest(
        storage.Manifest([{"scene": "ok.kfvol"}, {"scene": "missing.kfvol"}]), path
    )
    with pytest.raises(DanglingReferenceError) as err:
        storage.read_manifest(path)
    assert "missing.kfvol" in str(err.value)
    got = storage.read_manifest(path, check_files=False)
    assert len(got.records) == 2


def test_rotation_grid_roundtrip(tmp_path):
    grid = hopf_subset_grid(1, [3, 14, 15])
    path = tmp_path / "grid.json"
    storage.write_rotation_grid(grid, path)
    back = storage.read_rotation_grid(path)
    assert back.kind == grid.kind and back.level == grid.level
    np.testing.assert_array_equal(back.indices, grid.indices)
    np.testing.assert_array_equal(back.quats, grid.quats)


def test_value_map_roundtrip(rng, tmp_path):
    geom = centered_geometry((8, 8, 8), 0.01)
    grid = PoseGrid(geom, np.arange(2, 6), np.arange(1, 5), np.arange(3, 7), cube_group(), 2, (0, 0, 0))
    values = rng.standard_normal(grid.value_shape).astype(np.float32)
    avm = ActionValueMap(grid, values)
    path = tmp_path / "q.kfvol"
    storage.write_value_map(avm, path)
    back = storage.read_value_map(path)
    np.testing.assert_array_equal(back.values, values)
    np.testing.assert_array_equal(back.grid.xs, grid.xs)
    np.testing.assert_array_equal(back.grid.rotations.quats, grid.rotations.quats)
    assert back.grid.level == 2
    np.testing.assert_allclose(back.grid.translation(0, 0, 0), grid.translation(0, 0, 0), atol=1e-12)
