"""Exception types raised across the toolkit."""


class SubnetmleError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SubnetmleError, ValueError):
    """Array sizes are inconsistent with the declared operator or signal length."""


class SingularOperatorError(SubnetmleError, ValueError):
    """A triangular solve was requested against an operator with zero diagonal."""


class TopologyError(SubnetmleError, ValueError):
    """Interconnection matrices violate the signed-entry or source-vertex rules."""


class SeparationError(SubnetmleError, ValueError):
    """The requested partition has direct edges between the target and the remainder."""


class ChannelError(SubnetmleError, ValueError):
    """A required exogenous or separator channel is missing from the supplied data."""


class DivergenceError(SubnetmleError, ArithmeticError):
    """A simulated signal exceeded the overflow threshold."""

    def __init__(self, message: str, sample: int | None = None):
        super().__init__(message)
        self.sample = sample


class ObservationError(SubnetmleError, ValueError):
    """The observation pattern is insufficient for the requested likelihood form."""


class DomainError(SubnetmleError, ValueError):
    """A parameter is outside the admissible domain (e.g. variance below floor)."""


class RankError(SubnetmleError, ValueError):
    """The observed-channel covariance is rank deficient (selection matrix loses rank)."""


class UndefinedFitError(SubnetmleError, ValueError):
    """The fit metric is undefined because the reference signal is constant."""


class PoleError(SubnetmleError, ZeroDivisionError):
    """A rational transfer function was evaluated at (or too close to) a pole."""


class ConfigError(SubnetmleError, ValueError):
    """An experiment configuration file is malformed or inconsistent."""
