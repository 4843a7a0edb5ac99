"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`JumpPathError`, which is itself a :class:`ValueError`.
"""


class JumpPathError(ValueError):
    """Base class for all package errors."""


# kernel construction / validation
class NegativeRate(JumpPathError):
    pass


class NonFiniteRate(JumpPathError):
    pass


class DiagonalEntry(JumpPathError):
    pass


class StateOutOfRange(JumpPathError):
    pass


class DimensionMismatch(JumpPathError):
    pass


class Reducible(JumpPathError):
    """The jump graph is not strongly connected."""


# committor
class SetsOverlap(JumpPathError):
    pass


class EmptySet(JumpPathError):
    pass


class UnreachableBoundary(JumpPathError):
    """Some interior state cannot reach A or B; the linear system is singular."""


class SolverError(JumpPathError):
    pass


# finite horizon
class ImproperTerminal(JumpPathError):
    pass


class StepTooLarge(JumpPathError):
    pass


class InfiniteValue(JumpPathError):
    pass


# controls
class ZeroDivisor(JumpPathError):
    pass


class NegativeField(JumpPathError):
    pass


class AbsorbingState(JumpPathError):
    pass


# simulation
class StuckAbsorbing(JumpPathError):
    """A path reached a state with zero exit rate and no stopping rule applies."""


class NoPaths(JumpPathError):
    pass


# io
class ParseError(JumpPathError):
    pass


class DuplicateRateEntry(ParseError):
    pass
