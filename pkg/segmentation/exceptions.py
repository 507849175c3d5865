class SegmentationError(ValueError):
    """Base class for every error raised by the harness."""


class VolumeFormatError(SegmentationError):
    pass


class ShapeMismatchError(SegmentationError):
    pass


class InvalidOrganCodeError(SegmentationError):
    pass


class PhantomError(SegmentationError):
    pass


class ConfigError(SegmentationError):
    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class NonFiniteError(SegmentationError):
    pass


class CheckpointError(SegmentationError):
    pass


class EnsembleError(SegmentationError):
    pass
