"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid scenario, array or estimator configuration."""


class IdentifiabilityError(ConfigurationError):
    """The noise subspace would be empty (N - K < 1) or T < K."""


class SingularityError(ValueError):
    """Squint mapping evaluated at endfire (|u| = 1), where the range map diverges."""
