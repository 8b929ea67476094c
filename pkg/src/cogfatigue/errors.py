"""Exception hierarchy shared across the package."""


class CogFatigueError(Exception):
    """Base class for all package-specific errors."""


class FormatError(CogFatigueError, ValueError):
    """A file does not conform to its declared on-disk format."""


class ShapeError(CogFatigueError, ValueError):
    """A tensor has the wrong rank or dimension sizes."""


class ValidationError(CogFatigueError, ValueError):
    """Data violates an invariant (non-finite voxels, label mismatch, ...)."""


class DomainError(CogFatigueError, ValueError):
    """An input is outside the mathematical domain of an operation."""


class RangeError(CogFatigueError, ValueError):
    """A scalar argument is outside its allowed range."""


class SizeError(CogFatigueError, ValueError):
    """A collection is too small (or too large) for the requested operation."""


class ConfigError(CogFatigueError, ValueError):
    """A configuration file or override is malformed."""


class TrainingError(CogFatigueError, RuntimeError):
    """Training produced a non-finite loss or otherwise diverged."""
