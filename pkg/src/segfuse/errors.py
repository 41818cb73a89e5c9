"""Exception hierarchy for the fusion engine.

Everything raised on bad input derives from SegfuseError so callers (and the
CLI, which maps them to exit code 2) can catch one type.
"""


class SegfuseError(Exception):
    """Base class for all engine errors."""


class ShapeError(SegfuseError):
    """Operands have incompatible or out-of-bounds dimensions."""


class FormatError(SegfuseError):
    """A file or encoded payload violates its declared format."""


class DataValidationError(SegfuseError):
    """A value violates a type invariant or an operation precondition."""


class DegenerateAttentionError(SegfuseError):
    """Attention normalization hit an all-zero row."""
