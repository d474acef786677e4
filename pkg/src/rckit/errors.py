"""Exception hierarchy.

Two families: ``InputError`` for bad data, configuration or preconditions
(CLI exit code 1) and ``NumericalError`` for fits that cannot be completed
(CLI exit code 2).
"""

from __future__ import annotations


class RcKitError(Exception):
    """Base class for all rckit errors."""


class InputError(RcKitError, ValueError):
    pass


class NumericalError(RcKitError, ArithmeticError):
    pass


# dataset
class MalformedCsv(InputError):
    pass


class RoleConflict(InputError):
    pass


class UnknownColumn(InputError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NonPositiveLog(InputError):
    pass


class MissingValidationFlag(InputError):
    pass


class MissingValidationData(InputError):
    pass


# glm
class DimensionMismatch(InputError):
    pass


class RankDeficient(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class Separation(NumericalError):
    pass


# calibration
class InsufficientValidationRows(InputError):
    pass


class TooFewDistinctValues(InputError):
    pass


# rc
class AlignmentError(InputError):
    pass


class LambdaNearZero(NumericalError):
    pass


class NotLogScale(InputError):
    pass


# variance
class TooManyFailedReplicates(NumericalError):
    pass


class SingularA(NumericalError):
    pass


# mediation
class MissingReplicates(InputError):
    pass


class ZeroDenominator(NumericalError):
    pass


class InvalidR2(InputError):
    pass


# samplesize / survey / cli
class InvalidInput(InputError):
    pass


class SingletonStratum(InputError):
    pass


class ConfigError(InputError):
    pass
