"""Exception types raised across the package."""


class RRHinfError(Exception):
    """Base class for all package errors."""


# network
class SelfLoop(RRHinfError, ValueError):
    pass


class DisconnectedGraph(RRHinfError, ValueError):
    pass


class IndexOutOfRange(RRHinfError, IndexError):
    pass


class NotANeighbour(RRHinfError, ValueError):
    pass


class NonPositivePeriod(RRHinfError, ValueError):
    pass


# model / config
class DimensionMismatch(RRHinfError, ValueError):
    pass


class SchemaError(RRHinfError, ValueError):
    pass


# lmi
class PartitionMismatch(RRHinfError, ValueError):
    pass


class EmptyNeighbourhood(RRHinfError, ValueError):
    pass


class NonPositiveGap(RRHinfError, ValueError):
    pass


class NonAffineExpression(RRHinfError, TypeError):
    pass


# solver / synthesis
class InfeasibleProgram(RRHinfError):
    pass


class NumericalFailure(RRHinfError):
    pass


class SingularMultiplier(RRHinfError):
    pass


# simulation
class StepNotDividingPeriod(RRHinfError, ValueError):
    pass


class HorizonNotMultiple(RRHinfError, ValueError):
    pass


class OutOfHistory(RRHinfError, ValueError):
    pass


class ZeroDenominator(RRHinfError, ZeroDivisionError):
    pass
