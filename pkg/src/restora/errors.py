"""Exception types shared across the package."""


class RestoraError(Exception):
    """Base class for all package errors."""


class ParseError(RestoraError):
    """Input file violates the feeder/scenario schema."""


class ConfigError(RestoraError):
    """Invalid solver or CLI configuration value."""


class TopologyError(RestoraError):
    """Graph-structural precondition violated (cycle, disconnection, ...)."""


class StateError(RestoraError):
    """Missing or inconsistent consensus state for a subproblem build."""


class InfeasibleAssignment(RestoraError):
    """A fixed Boolean assignment contradicts a pinned constraint."""


class EnumerationCapExceeded(RestoraError):
    """Brute-force search refused: too many free binaries."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} free binaries exceeds enumeration cap {cap}")
        self.count = count
        self.cap = cap
