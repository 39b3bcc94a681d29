"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
and subclasses exit 2, ``NumericalError`` exits 3.
"""


class AQHashError(Exception):
    """Base class for all package errors."""


class ShapeError(AQHashError, ValueError):
    """Operand shapes do not conform for an operation.

    The message always names the op and every offending shape so failures
    deep inside a graph are attributable.
    """

    def __init__(self, op: str, *shapes, reason: str = "incompatible shapes"):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: {reason} {detail}".rstrip())


class ConfigError(AQHashError, ValueError):
    """A model or training configuration is internally inconsistent."""


class DataError(AQHashError):
    """An external input (manifest, feature file, codes file) is invalid."""


class ManifestError(DataError):
    """Dataset manifest or feature file failed validation."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt, truncated, or from an unknown version."""


class NumericalError(AQHashError):
    """A computation produced non-finite values or failed a numeric gate."""
