"""Exception types; the CLI maps each one to an exit code."""


class ConsensusLabError(Exception):
    exit_code = 1


class InvalidInputError(ConsensusLabError, ValueError):
    """Malformed graph, model, or numeric parameter."""

    exit_code = 2


class CapExceededError(ConsensusLabError):
    """Problem too large for exhaustive enumeration or dense analysis."""

    exit_code = 3


class AnalysisInapplicableError(ConsensusLabError):
    """A hypothesis of the analysis is unmet (no spanning tree, non-complete graph, ...)."""

    exit_code = 4


class ConvergenceError(ConsensusLabError):
    """An iterative method ran out of budget without a verdict."""

    exit_code = 1

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate
