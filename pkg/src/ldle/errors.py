"""Exception hierarchy.

Every error raised by the library derives from :class:`LDLEError`.  The three
intermediate classes map onto the CLI exit codes (2 invalid configuration,
3 data error, 4 numeric failure).
"""


class LDLEError(Exception):
    exit_code = 1


class InvalidParameterError(LDLEError, ValueError):
    """A hyperparameter or argument is outside its admissible range."""

    exit_code = 2


class DataError(LDLEError, ValueError):
    """Input data is malformed or degenerate."""

    exit_code = 3


class NumericError(LDLEError, ArithmeticError):
    """A numerical stage failed to produce a usable result."""

    exit_code = 4


class ParseError(DataError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class InvalidInputError(DataError):
    pass


class DegenerateScaleError(DataError):
    """A local scale (kernel bandwidth or ball radius) is zero."""

    def __init__(self, index, what="sigma"):
        super().__init__(f"{what} is zero at point {index} (duplicate points?)")
        self.index = index


class UnreachableError(DataError):
    """The neighbourhood graph is disconnected."""

    def __init__(self, source, target):
        super().__init__(f"point {target} is unreachable from point {source}")
        self.pair = (source, target)


class DegenerateViewError(DataError):
    def __init__(self, view):
        super().__init__(f"all points of view {view} map to the same location")
        self.view = view


class ConvergenceError(NumericError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SelectionInfeasibleError(NumericError):
    def __init__(self, point, stage):
        super().__init__(f"no feasible eigenvector at stage {stage} for point {point}")
        self.point = point
        self.stage = stage


class AlignmentInfeasibleError(NumericError):
    def __init__(self, components):
        sizes = ", ".join(str(len(c)) for c in components)
        super().__init__(
            f"view overlap graph has {len(components)} components (sizes {sizes})"
        )
        self.components = components
