"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside its documented operating box."""


class IntegrationError(RuntimeError):
    """Numerical integration produced a non-finite state."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge."""


class SteadyStateError(RuntimeError):
    """Steady-state solve did not reach the residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class GridBuildError(RuntimeError):
    """Building one region of the operating grid failed."""

    def __init__(self, message, region_index=None):
        super().__init__(message)
        self.region_index = region_index


class QPInfeasibleError(RuntimeError):
    """The QP constraint set is empty; carries the conflicting row indices."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class QPNumericError(RuntimeError):
    """The QP solver broke down before meeting its KKT tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ControllerFault(RuntimeError):
    """An MPC step failed; carries the region index and QP residuals."""

    def __init__(self, message, region_index=None, residuals=None):
        super().__init__(message)
        self.region_index = region_index
        self.residuals = residuals


class DegenerateStepError(ValueError):
    """A step reference has zero magnitude for some output."""


class OracleError(RuntimeError):
    """Cost evaluation failed at a perturbed candidate inside the oracle."""


class TrainingError(RuntimeError):
    """Surrogate training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class TuningError(RuntimeError):
    """No usable starting point: every batch member faulted."""
