"""Exception hierarchy shared by all modules.

CLI exit-code mapping: ValidationError and subclasses -> 1,
FormatError and OS-level I/O failures -> 2.
"""


class InspectError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(InspectError):
    """Invalid argument or domain-object invariant violation."""


class DimensionError(ValidationError):
    """Shape or size mismatch between arrays/images."""


class GeometryError(ValidationError):
    """Degenerate or impossible geometry (empty crop, non-positive side)."""


class ConfigError(ValidationError):
    """Bad or incomplete pipeline configuration."""


class StateError(InspectError):
    """Operation not legal in the current state (e.g. stepping a finished session)."""


class FormatError(InspectError):
    """Corrupt or unsupported file content.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChainingError(InspectError):
    """Detection-to-anomaly chaining cannot proceed (missing component, no frame)."""


class DivergenceError(InspectError):
    """Training produced a non-finite loss; carries the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step
