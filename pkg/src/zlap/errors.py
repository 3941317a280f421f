"""Exception hierarchy shared by all zlap modules.

Each class carries the CLI exit code it maps to (1 validation, 2 I/O,
3 numerical).
"""


class ZlapError(Exception):
    exit_code = 1


class ValidationError(ZlapError):
    """Bad configuration or argument values."""


class ShapeError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    """Input whose result is mathematically undefined (zero norm, zero range)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CapacityError(ValidationError):
    pass


class DataError(ZlapError):
    """Values that violate a data invariant (non-finite, negative degree)."""


class FormatError(ZlapError):
    """Wrong magic, version, or header in a binary file."""

    exit_code = 2


class SizeError(FormatError):
    """Payload length disagrees with the header."""


class NumericalError(ZlapError):
    exit_code = 3

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
