"""Exception types raised by the solvers."""


class DomainError(ValueError):
    """A state, control value or special-function argument is out of range."""


class IntegrationError(RuntimeError):
    """A time step carried the state out of the feasible region."""


class SingularityError(ArithmeticError):
    """Evaluation too close to the herd-immunity corner x = 1/sigma0, y = 0."""


class CFLError(ValueError):
    """Explicit time step exceeds the advective stability bound."""


class GridExitError(RuntimeError):
    """A synthesized trajectory left the grid domain."""


class SweepConvergenceError(RuntimeError):
    """Forward-backward sweep failed to converge.

    ``history`` holds the per-iteration control residuals.
    """

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class ScenarioError(ValueError):
    """Malformed or invalid scenario configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
