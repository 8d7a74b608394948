

class ActionNotFound(Exception):
    pass


class ConfigurationNotFound(Exception):
    pass


class ConfigurationValidationError(Exception):
    pass


class ActionExecutionError(Exception):
    pass


class DataValidationError(ValueError):
    """Raised for records that break a data invariant (ordering, finiteness, shapes)."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ModelSpecError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class SolverNumericalError(Exception):
    """A backend crashed or stopped short; the next backend may do better."""

    def __init__(self, message, backend=None, info=None):
        super().__init__(message)
        self.backend = backend
        self.info = info or {}


class SolverFailure(Exception):
    """The conic program did not reach an optimal, verified solution."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


class InfeasibleProgram(SolverFailure):
    pass
