"""Exception hierarchy shared by every module."""


class RamcpError(Exception):
    """Base class for all library errors."""


class ProblemError(RamcpError, ValueError):
    """Malformed planning problem or out-of-range index."""


class EnvelopeError(RamcpError, ValueError):
    """Invalid risk envelope or value vector."""


class InfeasibleError(RamcpError):
    """Linear program (or envelope) has no feasible point."""


class UnboundedError(RamcpError):
    """Linear program objective is unbounded."""


class PolicyUndefinedError(RamcpError):
    """A policy was queried at a history it does not cover."""

    def __init__(self, history, reason="policy undefined"):
        self.history = tuple(int(x) for x in history)
        super().__init__(f"{reason} at history {self.history}")


class EnumerationLimitError(RamcpError):
    """Exhaustive oracle computation would exceed its size bound."""


class ConfigError(RamcpError, ValueError):
    """Invalid experiment configuration, optionally located in a config file."""

    def __init__(self, message, key=None, path=None, line=None):
        self.message = message
        self.key = key
        self.path = path
        self.line = line
        super().__init__(message)

    def located(self, path, line):
        return ConfigError(self.message, self.key, path, line)

    def __str__(self):
        where = ""
        if self.path is not None:
            where = f"{self.path}:{self.line}: " if self.line else f"{self.path}: "
        return where + self.message


class WeightError(RamcpError, ValueError):
    """Simulation weight is negative or not finite."""
