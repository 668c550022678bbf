"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so keep the split between user
errors (bad arguments, bad configs) and numerical trouble.
"""


class NeckCalibError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NeckCalibError, ValueError):
    pass


class DomainError(NeckCalibError, ValueError):
    """A fiber or base point lies outside the declared domain."""


class SpecViolationError(NeckCalibError, ValueError):
    """User-supplied data breaks a structural contract (positivity, SPD, ...)."""


class NumericalDegeneracyError(NeckCalibError, ArithmeticError):
    pass


class DegenerateChartError(NumericalDegeneracyError):
    pass


class SamplingError(NumericalDegeneracyError):
    pass


class StateError(NeckCalibError, RuntimeError):
    """An operation needs state that has not been resolved yet (e.g. q0)."""
