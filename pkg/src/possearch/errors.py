"""Exception and warning types raised by the solvers."""


class PossearchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PossearchError, ValueError):
    pass


class SingularE(PossearchError):
    """The input budget matrix E is numerically singular."""


class BadAction(PossearchError, ValueError):
    pass


class NoConvergence(PossearchError):
    """Value iteration hit its iteration cap (the optimal cost may be infinite)."""


class UnstablePolicy(PossearchError):
    pass


class TooLarge(PossearchError):
    pass


class Infeasible(PossearchError):
    """No policy stabilizes the closed loop."""


class MissingInitialPolicy(PossearchError):
    pass


class BetaUndefined(PossearchError):
    pass


class NotSubstochastic(PossearchError):
    """Some closed-loop column sums exceed one; use the skeleton expansion."""


class ZeroCostNonGoal(PossearchError):
    pass


class NonPositiveTransformedCost(UserWarning):
    """Normalizing E produced a state cost that is not strictly positive."""


class DivergentMass(UserWarning):
    """An absorption limit did not exist and a truncated iterate was used."""
