"""Exception types raised across the package."""


class ATPError(Exception):
    """Base class for package errors."""


class ShapeError(ATPError, ValueError):
    pass


class ConfigError(ATPError, ValueError):
    pass


class InputSizeError(ATPError, ValueError):
    """Image extents incompatible with the block size."""


class QuantizationError(ATPError, ValueError):
    pass


class FormatError(ATPError, ValueError):
    """Malformed or unrecognised binary file."""


class GraphError(ATPError, RuntimeError):
    pass


class TrainingError(ATPError, RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class DataError(ATPError, OSError):
    pass
