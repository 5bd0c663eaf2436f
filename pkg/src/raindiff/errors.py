"""Exception types shared across the package."""


class RainDiffError(Exception):
    """Base class for all package errors."""


class DomainError(RainDiffError, ValueError):
    """A time or scalar argument lies outside its valid interval."""


class DimensionError(RainDiffError, ValueError):
    """Array arguments have incompatible shapes."""


class ConfigError(RainDiffError, ValueError):
    """A configuration object is internally inconsistent or unusable."""


class DivergenceError(RainDiffError, RuntimeError):
    """A training loss or sampler state became non-finite; names the step."""


class FileFormatError(RainDiffError, ValueError):
    """An on-disk data file (image, pair map) is malformed."""


class DegenerateEmbeddingError(RainDiffError, ValueError):
    """An embedding or prompt vector is zero, so cosine similarity is undefined."""


class CheckpointError(RainDiffError, RuntimeError):
    """A checkpoint file is malformed, truncated, or fails its checksum."""
