"""Exception hierarchy shared across the package."""


class HeatLabError(Exception):
    """Base class for all package errors."""


class ValidationError(HeatLabError, ValueError):
    """Bad parameters, inconsistent grids, violated preconditions.

    Maps to CLI exit code 2.
    """


class NumericalError(HeatLabError, RuntimeError):
    """A computation ran but failed its numerical contract.

    Maps to CLI exit code 3.
    """
