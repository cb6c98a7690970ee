class InvalidInputError(ValueError):
    """Argument outside an operation's domain."""


class LoadError(Exception):
    """A visual log (or other artifact) on disk could not be loaded."""


class ManifestError(LoadError):
    pass


class MissingFileError(LoadError):
    pass


class DimensionMismatchError(LoadError):
    pass


class TimestampOrderError(LoadError):
    pass


class TextDetectionError(RuntimeError):
    """Text detector failed; carries the captured diagnostics."""

    def __init__(self, message, diagnostics=""):
        super().__init__(message)
        self.diagnostics = diagnostics


class ValidationError(ValueError):
    """A synthetic screen/script or config is inconsistent."""
