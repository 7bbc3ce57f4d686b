"""Exception hierarchy shared by every stage of the package."""


class AECError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AECError, ValueError):
    """Input file or stream does not follow its declared format."""


class ParseError(FormatError):
    """A line of a structured text file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(AECError, ValueError):
    """Parsed data violates a domain invariant."""


class DegenerateError(AECError, ValueError):
    """Input is well formed but too small or too uniform to proceed."""


class RangeError(AECError, IndexError):
    """A size or count argument lies outside its allowed range."""


class JoinError(AECError, KeyError):
    """An id expected in one collection is missing from another."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ShapeError(AECError, ValueError):
    """Numeric row or matrix has the wrong shape."""


class ConfigError(AECError, ValueError):
    """Run configuration is invalid or references missing inputs."""


class MissingArtifactError(ConfigError):
    """A stage was requested before the artifacts it consumes were produced."""
