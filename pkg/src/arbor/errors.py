"""Exception hierarchy.

The CLI maps :class:`DataError` (and its subclasses) to exit status 3 and
:class:`NumericalError` to exit status 4.
"""


class ArborError(Exception):
    """Base class for all package errors."""


class DataError(ArborError, ValueError):
    """Malformed input: bad trees, files, datasets or parameter values."""


class TreeError(DataError):
    """A tree violates the leaf-labeled tree invariants."""


class NewickError(DataError):
    """Malformed Newick text. ``pos`` is the 0-based character offset."""

    def __init__(self, message, pos=None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)


class NumericalError(ArborError, ArithmeticError):
    """A computation hit a singular or degenerate configuration."""


class DegenerateError(NumericalError):
    """Zero determinant or zero-probability data where a positive value is required.

    ``row`` carries the offending data row index when the failure is row-specific.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class NonIdentifiableError(NumericalError):
    """Inputs lie on a positive-dimensional fiber of the parameterization."""


class InconsistentInputError(DataError):
    """Inputs cannot come from the assumed model."""
