"""Exception hierarchy.

Every numerical failure derives from :class:`SolverError` so the CLI can map
it to exit code 2; configuration problems derive from :class:`ConfigError`
(exit code 1).
"""

from __future__ import annotations


class ElbPegError(Exception):
    """Base class for all package errors."""


class ConfigError(ElbPegError):
    """Invalid user input: bad file, missing key, infeasible bounds."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingColumn(ConfigError):
    pass


class SolverError(ElbPegError):
    """A numerical routine could not produce a valid answer."""


# qme
class SingularAStar(SolverError):
    pass


class NoModulusGap(SolverError):
    pass


class DefectiveEigenvectors(SolverError):
    pass


class SingularIterate(SolverError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} (iteration {step})")


# model-core
class SingularA0(SolverError):
    pass


# chain
class NoAdmissibleRoot(SolverError):
    pass


class ComplexExitDynamics(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class ElbVerificationFailed(SolverError):
    def __init__(self, period: int, shadow_rate: float, reason: str = ""):
        self.period = period
        self.shadow_rate = shadow_rate
        msg = f"ELB verification failed at period {period} (rate {shadow_rate:.6g})"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


# multiplier
class SingularOmega(SolverError):
    pass


class RhoZeroWithHabits(SolverError):
    pass


class ComplexMinimalSolution(SolverError):
    pass


class BoundaryCase(SolverError):
    pass


class DurationChanged(SolverError):
    pass


# arna
class Indeterminacy(SolverError):
    pass


class NoStableSolution(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class HorizonTooShort(SolverError):
    pass


# nkhabits
class NonIntersecting(SolverError):
    pass


class NoRootInUnitInterval(SolverError):
    pass


# estimate
class NoImprovement(SolverError):
    pass
