"""
Exception hierarchy for the latent network tool.

Library code raises these; the command-line entry point maps them to exit codes.
"""


class LatentNetError(Exception):
    """Base class for all errors raised by this package"""
    exit_code = 1


class ConfigError(LatentNetError):
    """Invalid or inconsistent configuration (usage error)"""
    exit_code = 1


class DataError(LatentNetError):
    """Input data that violates a schema or a data invariant"""
    exit_code = 2


class NumericalError(LatentNetError):
    """Numerical failure such as a non-finite log-posterior at initialization"""
    exit_code = 3


class InvalidParameters(LatentNetError):
    """A parameter draw outside the model's constraint set.

    Raised inside likelihood code and converted to a log-density of -inf by the
    posterior; it never reaches the user.
    """
    exit_code = 3
