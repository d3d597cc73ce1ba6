"""Exception types shared across the package."""


class CbpfError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CbpfError, ValueError):
    """Image/patch/tensor geometry is invalid or inconsistent."""


class ConfigError(CbpfError, ValueError):
    """A configuration object is structurally invalid for the requested operation."""


class CapacityError(CbpfError, ValueError):
    """Clean-label poisoning asked for more samples than the target class holds."""


class LabelSpaceError(CbpfError, ValueError):
    """Label-space extension applied twice, or required extension missing."""


class UndefinedMetricError(CbpfError, ArithmeticError):
    """A metric's denominator is empty; the value is undefined, not zero."""


class TrainingDivergedError(CbpfError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


class PipelineError(CbpfError, RuntimeError):
    """The defense pipeline cannot continue (e.g. empty clean pool)."""


class FormatError(CbpfError, ValueError):
    """A serialized file does not match its wire format."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass
