"""Error types shared across the package.

Three failure families, mirrored by the CLI exit codes: bad caller input
(exit 1), numerical breakdown (exit 2), and I/O trouble (exit 3, plain
OSError).
"""


class InvalidArgumentError(ValueError):
    """Caller passed something structurally wrong (shape, range, name)."""


class NumericalError(ArithmeticError):
    """A numerical routine failed beyond recovery.

    Optional context travels with the exception so callers can report
    precisely what broke without parsing messages.
    """

    def __init__(self, message, *, minor_index=None, block=None, iteration=None):
        super().__init__(message)
        self.minor_index = minor_index
        self.block = block
        self.iteration = iteration
