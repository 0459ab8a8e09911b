"""Exception types shared across the toolkit."""


class TubeMPCError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(TubeMPCError, ValueError):
    """Malformed or out-of-domain argument."""


class EmptySetError(TubeMPCError):
    """A set operation produced an empty set (configuration error for callers)."""


class DegenerateSetError(TubeMPCError):
    """A set collapsed to a point where a full-dimensional set was required."""


class StructureError(TubeMPCError):
    """Required block-decoupled structure is absent."""


class ConvergenceError(TubeMPCError):
    """An iterative procedure failed to converge within its iteration cap."""


class FiniteDeterminationError(TubeMPCError):
    """The admissible-set recursion did not terminate within the index cap."""

    def __init__(self, message, offending_row=None):
        super().__init__(message)
        self.offending_row = offending_row


class NoSteadyStateError(TubeMPCError):
    """The plant admits no steady state (empty equilibrium manifold)."""


class InfeasibleError(TubeMPCError):
    """An optimization problem is infeasible.

    ``certificate`` carries a Farkas-type ray y >= 0 with y'G = 0 and
    y'h < 0 when one is available.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class SolverFailureError(TubeMPCError):
    """The QP solver stopped without an optimal or infeasible verdict."""


class ConditionViolatedError(TubeMPCError):
    """A weight-matrix condition required by a diagnostic does not hold."""


class ConfigError(TubeMPCError):
    """Invalid experiment configuration; message names the offending field."""
