from typing import Optional


class SimulationError(Exception):
    """Base class for simulator faults"""


class SchedulingError(SimulationError):
    """An event was scheduled before the current clock (programming error)"""


class BandwidthViolation(SimulationError):
    """The MAC started a transmission that breaks the per-node bandwidth budget"""


class ScenarioConfigError(ValueError):
    """
    Invalid scenario or sweep configuration

    Carries the offending line number and field so the CLI can print
    a diagnostic like ``scenario.conf:7: nodes: must be >= 2``.
    """

    def __init__(
        self, message: str, line: Optional[int] = None, field: Optional[str] = None
    ):
        self.message = message
        self.line = line
        self.field = field
        super().__init__(self.__str__())

    def __str__(self) -> str:
        location = f"line {self.line}: " if self.line is not None else ""
        field = f"{self.field}: " if self.field else ""
        return f"{location}{field}{self.message}"


class AnalyticsDomainError(ValueError):
    """A cost-model input is outside the formula's domain"""
