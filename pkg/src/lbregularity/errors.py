"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the region where an operation is defined."""


class SingularityError(DomainError):
    """Kernel evaluated on its diagonal, where it is singular."""


class NoTrajectoryError(DomainError):
    """Zero velocity: the backward characteristic never reaches the boundary."""


class ConfigError(ValueError):
    """Scenario configuration is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class TruncationWarning(UserWarning):
    """Velocity truncation radius leaves more Gaussian tail mass than tolerated."""
