"""Mining visual logs of GUI software: element detection, interaction
inference and usage-pattern learning over recorded screen frames."""

from vismine.errors import InvalidInputError, LoadError, TextDetectionError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "InvalidInputError",
    "LoadError",
    "TextDetectionError",
    "ValidationError",
    "__version__",
]
