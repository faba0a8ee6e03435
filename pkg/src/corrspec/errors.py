"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so that the
command line front end can map them to distinct exit codes.
"""


class CorrspecError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CorrspecError, ValueError):
    """Invalid user input: dimensions, laws, parameters, file formats."""


class InvalidDimensionError(ConfigurationError):
    pass


class InsufficientDataError(ConfigurationError):
    pass


class DegenerateVariableError(ConfigurationError):
    """A variable has zero (or negative) sample variance."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"variable {index} has non-positive variance {value!r}")


class SingularMatrixError(ConfigurationError):
    pass


class NumericalError(CorrspecError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


class SolverError(NumericalError):
    def __init__(self, msg, residual=None):
        self.residual = residual
        super().__init__(msg if residual is None else f"{msg} (last residual {residual:.3e})")


class BranchError(NumericalError):
    pass


class UnsupportedSupportError(NumericalError):
    def __init__(self, msg, edges=()):
        self.edges = tuple(edges)
        super().__init__(f"{msg}; candidate edges: {list(self.edges)}")


class PrecisionError(NumericalError):
    pass


class ContourError(NumericalError):
    """Contour geometry violates a requirement (overlap, coincident points)."""


class DegenerateJointError(NumericalError):
    pass


class ModelInconsistencyError(NumericalError):
    pass
