"""Exception hierarchy.

Every error carries a category used by the CLI to pick an exit code:
``config`` (2), ``data`` (3) and ``numeric`` (4).
"""


class HavokMpcError(Exception):
    category = "numeric"


class ConfigError(HavokMpcError, ValueError):
    category = "config"


class DataError(HavokMpcError, ValueError):
    category = "data"


class SchemaError(DataError):
    pass


class SamplingError(DataError):
    pass


class SizeError(DataError):
    pass


class HistoryError(DataError):
    pass


class NumericError(HavokMpcError, ArithmeticError):
    category = "numeric"


class DegenerateError(NumericError):
    """Zero variance channel, all-zero spectrum and similar degenerate inputs."""


class DivergenceError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(NumericError):
    """Raised by the QP solver when the iteration cap is hit.

    ``best`` holds the iterate with the smallest projected-gradient residual.
    """

    def __init__(self, message, best=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class IllPosedRegressionWarning(RuntimeWarning):
    pass
