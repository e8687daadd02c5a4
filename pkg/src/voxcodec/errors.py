"""Exception types shared across the codec."""


class VoxcodecError(Exception):
    """Base class for all voxcodec errors."""


class ParseError(VoxcodecError):
    """Malformed input file (e.g. a bad PLY header line)."""


class DomainError(VoxcodecError, ValueError):
    """A value violates a documented precondition (range, sign, emptiness)."""


class ShapeError(VoxcodecError, ValueError):
    """Tensor or kernel shapes are inconsistent."""


class ConfigurationError(VoxcodecError, ValueError):
    """Invalid configuration (block size, lambda schedule, table budget...)."""


class UsageError(VoxcodecError):
    """API misuse, e.g. backward called with a mismatched tape."""


class EncodingError(VoxcodecError):
    """Failure while producing a bitstream."""


class DecodingError(VoxcodecError):
    """Corrupt or truncated bitstream."""


class ModelMismatchError(DecodingError):
    """Bitstream was produced with different model weights."""


class TrainingError(VoxcodecError):
    """Training diverged; carries the step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
