"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class DomainError(ValueError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateInputError(ValueError):
    """Input is empty or too small for the operation to be defined."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or infeasible."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class IntegrityError(RuntimeError):
    """A frozen artifact (parameters, dataset) changed when it must not."""


class TrainingDiagnosticsError(RuntimeError):
    """Training failed a sanity check; carries the loss trace."""

    def __init__(self, message, loss_trace=None):
        super().__init__(message)
        self.loss_trace = list(loss_trace) if loss_trace is not None else []
