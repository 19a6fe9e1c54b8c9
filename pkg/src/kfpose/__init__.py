"""kfpose: SE(3) pose search by coarse-to-fine lift cross-correlation on voxel grids."""

__version__ = "0.1.0"

from ._kernels import active_backend, set_backend, set_workers, workers
from .augment import AugmentBounds, KeyframeSample, augment, sample_transform
from .c2f import C2FConfig, C2FResult, LevelRecord, plan_level1, refine_grid, solve
from .correlate import ActionValueMap, PoseGrid, argmax, lift_correlate, rotated_kernels
from .errors import (
    ContentLossError,
    DanglingReferenceError,
    EngineError,
    GeometryMismatchError,
    MalformedHeaderError,
    ManifestError,
    StorageError,
    TruncatedPayloadError,
    UnknownDtypeError,
)
from .geometry import (
    IDENTITY,
    RigidTransform,
    apply_point,
    compose,
    from_axis_angle,
    inverse,
    rotation_about,
    rotation_distance,
    translation_distance,
)
from .inhand import ObservationPair, apply_mask, ground_truth_mask
from .so3grid import (
    RotationGrid,
    children,
    coverage_dispersion,
    cube_group,
    grid_size,
    healpix_pixel_center,
    hopf_healpix_grid,
    nearest_cell,
    so3_cell,
)
from .synth import TaskInstance, TaskSpec, exhaustive_argmax, featurize, generate
from .voxel import (
    GridGeometry,
    VoxelGrid,
    build_pyramid,
    centered_geometry,
    crop_at,
    downsample2,
    elementwise_mul,
    resample,
    rotate_about_center,
)
