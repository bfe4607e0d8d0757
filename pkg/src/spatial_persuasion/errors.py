"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class PersuasionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PersuasionError, ValueError):
    """A configuration document or constructor argument is malformed."""


class DisconnectedGraph(PersuasionError):
    """Some node cannot be reached from the shock node."""

    def __init__(self, unreachable):
        self.unreachable = tuple(int(i) for i in unreachable)
        super().__init__(f"nodes unreachable from node 0: {list(self.unreachable)}")


class AssumptionViolated(PersuasionError):
    """A precondition on the market (balance, depletion, regularity) fails."""


class NonConvergence(PersuasionError):
    """The equilibrium solver hit its iteration cap before reaching tolerance."""

    def __init__(self, iterations, gap):
        self.iterations = int(iterations)
        self.gap = float(gap)
        super().__init__(f"no convergence after {self.iterations} sweeps (gap {self.gap:.3e})")


class PatternMismatch(PersuasionError):
    """Market sizes do not follow the similar/monotone/similar layout."""


class NumericalFailure(PersuasionError):
    """A scalar root or bracketing equation could not be solved to tolerance."""


class DomainError(PersuasionError, ValueError):
    """An argument lies outside the domain of a function."""


class SolverStall(PersuasionError):
    """The cutting-plane loop exceeded its iteration cap."""


class RecoveryMismatch(PersuasionError):
    """An interval structure could not reproduce the requested allocation."""


class GridTooLarge(PersuasionError, ValueError):
    """Exhaustive enumeration was requested on too many cutoff candidates."""


class NoPairs(PersuasionError, ValueError):
    """No pair of nodes with distinct distances exists."""
