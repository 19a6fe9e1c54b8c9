"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all kfpose errors."""


class GeometryMismatchError(EngineError):
    """Two voxel grids disagree on dims, voxel size, or origin where they must match."""


class ContentLossError(EngineError):
    """An augmentation transform pushed too much occupied mass out of the volume."""


class StorageError(EngineError):
    """Base class for file I/O failures."""


class MalformedHeaderError(StorageError):
    """Volume header line is missing, not parseable, or fails validation."""


class UnknownDtypeError(StorageError):
    """Volume header declares a dtype this engine does not support."""


class TruncatedPayloadError(StorageError):
    """Volume payload is shorter than the header promises."""


class ManifestError(StorageError):
    """Manifest record is missing required keys or is not valid JSON."""


class DanglingReferenceError(StorageError):
    """Manifest references a file that does not exist on disk."""
