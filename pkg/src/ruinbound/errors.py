"""Exception hierarchy shared across the library.

The CLI maps these onto exit codes, so raise the most specific type that
applies: ConfigError for malformed run files, ParameterError for inputs that
violate a documented precondition, ModelError when the model itself is
ill-posed (divergent kernels, unattainable constraints, degenerate regimes),
and NumericalError when a solver fails to bracket or converge.
"""


class RuinboundError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RuinboundError, ValueError):
    """A run configuration file or CLI argument is malformed."""


class ParameterError(RuinboundError, ValueError):
    """An input value violates a documented precondition."""


class ModelError(RuinboundError):
    """The model assumptions fail for the supplied inputs."""


class NumericalError(RuinboundError):
    """A numerical routine failed to bracket or converge."""


class SlackConstraintWarning(UserWarning):
    """The ruin constraint does not bind at the requested tolerance."""
