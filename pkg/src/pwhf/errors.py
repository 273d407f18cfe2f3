"""Exception types shared across the solver."""


class InvalidParameterError(ValueError):
    """An argument violates a documented precondition."""


class SingularArgumentError(ValueError):
    """The requested evaluation point sits on a singularity of the kernel."""


class TruncationError(RuntimeError):
    """A truncated series failed its convergence check."""


class IntegrationError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class NumericalFailureError(RuntimeError):
    """A dense linear-algebra kernel failed to converge."""


class CapacityError(RuntimeError):
    """The discrete basis cannot hold the requested electron count."""


class ProbeNotApplicableError(RuntimeError):
    """The state has no partially occupied Fermi shell to probe."""
