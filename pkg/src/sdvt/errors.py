"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage problems and invalid
arguments exit 1, data/format problems exit 2, numeric failures exit 3.
"""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericInputError(ArithmeticError):
    """An input is numerically unusable (NaN, zero-norm row, ...)."""


class NumericFailureError(ArithmeticError):
    """A computation produced a non-finite result (e.g. NaN loss)."""


class GraphStateError(RuntimeError):
    """Autodiff graph misuse: backward twice, missing gradients, ..."""


class DataError(Exception):
    """A dataset file or record is unusable."""


class CheckpointFormatError(DataError):
    """A checkpoint file does not conform to the SDVT format."""
