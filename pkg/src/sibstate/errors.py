"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: usage errors exit 1, data errors
exit 2, numeric failures exit 3.
"""


class SibstateError(Exception):
    """Base class for all package errors."""


class DataError(SibstateError):
    """Invalid or inconsistent input data (CLI exit code 2)."""


class ParseError(DataError):
    """Malformed file contents; message carries the offending line number."""


class SchemaError(DataError):
    """Structurally valid file violating a documented schema constraint."""


class ReferenceCapacityError(DataError):
    """Reference-cycle capacity missing or non-positive."""


class SplitError(DataError):
    """Dataset too small to split, or split request inconsistent."""


class NumericError(SibstateError):
    """Numeric failure such as non-finite values (CLI exit code 3)."""


class ShapeError(NumericError):
    """Tensor shape mismatch in a numeric operation."""


class AggregationError(NumericError):
    """Aggregation requested over an empty collection."""


class DivergenceError(NumericError):
    """Non-finite value produced while integrating the learned dynamics."""


class CheckpointError(SibstateError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class GenerationError(SibstateError):
    """Infeasible synthetic-data parameter combination."""
