"""
Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes:
    InvalidInputError (and RegimeError)  -> 1
    NumericalError and its subclasses    -> 2
"""


class FracestError(Exception):
    """Base class for every error raised by fracest."""


class InvalidInputError(FracestError, ValueError):
    """Bad argument or malformed input file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


class RegimeError(InvalidInputError):
    """Parameter lies outside the regime where the estimation theory holds."""


class NumericalError(FracestError):
    """A numerical procedure failed to converge or produce a usable answer."""


class KernelNotPSDError(NumericalError):
    """Covariance matrix could not be factorized even after jitter escalation."""


class GenerationError(NumericalError):
    """Stationary series could not be simulated."""


class NotEstimableError(NumericalError):
    """Too little Monte-Carlo signal to estimate the requested quantity."""


class ReplicationError(NumericalError):
    """A replication block failed twice."""
