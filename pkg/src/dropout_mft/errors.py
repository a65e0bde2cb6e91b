"""Exception hierarchy.

Every error carries the CLI exit code it maps to: configuration problems exit
with 2, infeasible physics with 3.
"""

from __future__ import annotations


class MFTError(Exception):
    exit_code = 1


class InvalidArgument(MFTError, ValueError):
    exit_code = 2


class InsufficientData(MFTError):
    exit_code = 3


class PhysicsError(MFTError):
    """A request that is well formed but has no solution in the theory."""

    exit_code = 3


class NumericDomainError(PhysicsError):
    def __init__(self, message: str, node: float | None = None):
        super().__init__(message)
        self.node = node


class ClassMismatchError(PhysicsError):
    pass


class DegenerateInput(PhysicsError):
    pass


class NoFiniteFixedPoint(PhysicsError):
    pass


class NoCriticalPoint(PhysicsError):
    pass


class InfeasibleBudget(PhysicsError):
    pass


class UnreachableField(PhysicsError):
    pass


class InvalidRegime(PhysicsError):
    pass


class CannotRealizeCorrelation(PhysicsError):
    pass
