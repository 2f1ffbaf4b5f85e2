from __future__ import annotations

from typing import Any, List, Optional, Sequence, Tuple


class PowerControlError(Exception):
    """Base class for every error raised by the toolkit."""


class DimensionError(PowerControlError, ValueError):
    pass


class ScenarioError(PowerControlError, ValueError):
    pass


class UnreachableSinr(PowerControlError, ValueError):
    """The requested SINR is not below the interference-free cap."""


class TargetUndefined(PowerControlError, ValueError):
    """A percentage rate target needs a finite maximum SINR."""


class TargetExceedsMaxSinr(PowerControlError):
    def __init__(self, users: Sequence[int]) -> None:
        self.users = list(users)
        super().__init__(f"rate target not below the SINR cap for users {self.users}")


class Infeasible(PowerControlError):
    pass


class EmptyStrategySet(Infeasible):
    def __init__(self, user: int, p_min: float, p_max: float) -> None:
        self.user = user
        self.p_min = p_min
        self.p_max = p_max
        super().__init__(f"user {user}: minimum power {p_min:.6g} W exceeds budget {p_max:.6g} W")


class InfeasibleStart(PowerControlError, ValueError):
    pass


class SpectralRadiusNotConverged(PowerControlError):
    def __init__(self, lower: float, upper: float, iterations: int) -> None:
        self.lower = lower
        self.upper = upper
        self.iterations = iterations
        super().__init__(
            f"spectral radius bounds [{lower:.12g}, {upper:.12g}] did not meet after {iterations} iterations"
        )


class CapExceeded(PowerControlError):
    def __init__(self, message: str, trace: Optional[List[Any]] = None) -> None:
        self.trace = trace or []
        super().__init__(message)


class InnerSolverFailed(PowerControlError):
    def __init__(self, message: str, trace: Optional[List[Any]] = None) -> None:
        self.trace = trace or []
        super().__init__(message)


class NeedsPhaseOne(PowerControlError):
    """Raised when a barrier solve is started outside the strict interior."""


class MonotonicityViolation(PowerControlError):
    pass


class ConfigError(PowerControlError):
    def __init__(self, source: str, diagnostics: Sequence[Tuple[Optional[int], str]]) -> None:
        self.source = source
        self.diagnostics = list(diagnostics)
        lines = []
        for line, message in self.diagnostics:
            where = f"{source}:{line}" if line is not None else source
            lines.append(f"{where}: {message}")
        super().__init__("\n".join(lines))
