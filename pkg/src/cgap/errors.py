"""Exception types shared across the package."""


class CgapError(ValueError):
    """Base class for all package-specific errors."""


class DimensionError(CgapError):
    """Tensor shapes do not match an operation's contract."""


class GeometryError(CgapError):
    """Spatial geometry is invalid (non-integer conv output, odd pooling extent)."""


class StructuralError(CgapError):
    """A structural edit would break the network (empty a layer, touch the output layer)."""


class StalenessError(CgapError):
    """Gradient bundles no longer match the network structure they were computed on."""


class DivergenceError(CgapError):
    """Training produced a non-finite loss."""


class IdxError(CgapError):
    """Base class for IDX file parsing errors."""


class IdxMagicError(IdxError):
    """IDX file magic number is not one of the documented values."""


class IdxTruncatedError(IdxError):
    """IDX file payload is shorter than its header promises."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of items."""


class CheckpointError(CgapError):
    """Checkpoint file is malformed or internally inconsistent."""
