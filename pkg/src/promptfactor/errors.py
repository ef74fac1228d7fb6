"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation problems exit 2,
data problems (missing/malformed/corrupt files) exit 3, numerical
failures exit 4.
"""


class PromptFactorError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PromptFactorError, ValueError):
    """A precondition or configuration constraint was violated."""


class DataError(PromptFactorError):
    """An input file is missing, unreadable, or structurally unusable."""


class ParseError(DataError):
    """A dataset row or file could not be parsed; message names the location."""


class IntegrityError(DataError):
    """A persisted artifact failed its length or checksum verification."""


class FormatVersionError(DataError):
    """A persisted artifact was written with an unsupported format version."""


class NumericalError(PromptFactorError, RuntimeError):
    """An iterative solver produced non-finite values; message names the iteration."""
