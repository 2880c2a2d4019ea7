class CdisError(Exception):
    """Base class for every error raised by the cdis packages."""


class ValidationError(CdisError, ValueError):
    """An input violates a documented invariant or precondition."""


class ConfigError(ValidationError):
    """A JSON configuration file could not be loaded or failed validation."""


class BValueNotFoundError(ValidationError):
    pass


class InsufficientSlicesError(ValidationError):
    pass


class EmptyMaskError(ValidationError):
    pass


class VolumeIOError(CdisError, OSError):
    """Reading or writing a volume bundle failed. The message names the path."""


class CorruptFileError(VolumeIOError):
    pass


class UnsupportedFormatError(VolumeIOError):
    pass


class UndefinedAucError(CdisError, ValueError):
    """AUC needs at least one positive and one negative sample."""


class ObjectiveFaultError(CdisError, ArithmeticError):
    """The objective handed to the optimizer returned a non-finite value."""


class ConfigReadError(VolumeIOError):
    """A configuration file or case manifest is missing or unreadable."""
