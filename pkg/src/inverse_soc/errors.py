"""Exception hierarchy shared by all modules."""


class InverseSOCError(Exception):
    """Base class for errors raised by the library."""


class SimulationError(InverseSOCError):
    """Non-finite drift or diffusion encountered while simulating."""


class EvaluationError(InverseSOCError, ValueError):
    """A cost function produced a non-finite value."""


class CFLError(InverseSOCError):
    """The explicit HJB scheme would be unstable with the requested time step."""

    def __init__(self, message, required_steps):
        super().__init__(message)
        self.required_steps = required_steps


class DivergenceError(InverseSOCError):
    """The HJB iteration produced non-finite values."""


class BoundaryMassError(InverseSOCError):
    """Too much initial mass lies outside the computational domain."""


class ConvergenceError(InverseSOCError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(InverseSOCError, ValueError):
    """An experiment configuration failed validation."""
