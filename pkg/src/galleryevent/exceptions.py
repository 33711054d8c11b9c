"""Exception hierarchy.

Everything raised on bad user input derives from :class:`ValidationError`,
which the CLI maps to exit code 2.
"""


class GalleryEventError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GalleryEventError, ValueError):
    """Input data violates a documented invariant."""


class FormatError(ValidationError):
    """A file could not be parsed.

    ``line`` and ``field`` locate the problem when known.
    """

    def __init__(self, message, *, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingFeatureError(ValidationError):
    """A photo referenced by the manifest has no feature row."""

    def __init__(self, photo_id):
        self.photo_id = photo_id
        super().__init__(f"missing feature for photo {photo_id!r}")


class DomainError(ValidationError):
    """Arguments fall outside the domain of a distance function."""


class TrainingError(GalleryEventError, ValueError):
    """Training cannot proceed on the supplied data."""


class NotFittedError(GalleryEventError, AttributeError):
    """An estimator was used before ``fit``."""
