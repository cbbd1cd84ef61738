"""Exception types shared across the package."""


class OsbornError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(OsbornError):
    """Malformed input, unusable file, or an argument outside its domain.

    Maps to exit code 1 on the command line.
    """


class ComputationError(OsbornError):
    """A numerical procedure failed (solver breakdown, undefined statistic).

    Maps to exit code 2 on the command line.
    """
