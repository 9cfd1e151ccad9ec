"""Exception hierarchy; the CLI maps the three branches to exit codes 2/3/4."""


class HbsimexError(Exception):
    """Base class for all package errors."""


class ConfigError(HbsimexError):
    """Invalid run configuration (exit code 2)."""


class ParameterError(ConfigError):
    """A function argument is outside its documented domain."""


class DataError(HbsimexError):
    """Problems with input data (exit code 3)."""


class SchemaError(DataError):
    """A required column is missing or the schema is inconsistent."""


class ParseError(DataError):
    """A cell failed to parse; carries the offending 1-based data row."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ValidationError(DataError):
    """Parsed data violates a dataset invariant."""


class InsufficientReplicatesError(DataError):
    """Error-variance estimation needs at least one record with Q_i >= 2."""


class NumericError(HbsimexError):
    """Numerical failure during estimation (exit code 4)."""


class DomainError(NumericError):
    """A numeric argument is outside the mathematical domain."""


class SingularDesignError(NumericError):
    """Design matrix is rank deficient."""


class SingularFitError(NumericError):
    """Polynomial extrapolation has fewer distinct abscissae than coefficients."""


class UnderdispersionError(NumericError):
    """Sample variance does not exceed the mean; NB mixture unidentified."""


class ConvergenceError(NumericError):
    """Iterative fit did not converge; carries the last iterate."""

    def __init__(self, message: str, last_fit=None):
        super().__init__(message)
        self.last_fit = last_fit


class UndefinedStatisticError(NumericError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class PenaltyUndefinedError(NumericError):
    """WAIC penalty needs at least two posterior draws."""


class SimexEstimatorError(NumericError):
    """The plug-in estimator failed inside a SIMEX cell."""

    def __init__(self, message: str, lam: float, sim_index: int):
        super().__init__(f"lambda={lam}, b={sim_index}: {message}")
        self.lam = lam
        self.sim_index = sim_index
