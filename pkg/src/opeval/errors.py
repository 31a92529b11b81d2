"""Exception types raised across the toolkit."""


class OpevalError(Exception):
    """Base class for every error raised by opeval."""


class ArgumentError(OpevalError, ValueError):
    """An argument is out of range or has the wrong shape."""


class SupportError(OpevalError, ValueError):
    """The behavior policy (or occupancy) has no support where it is needed."""


class ConfigurationError(OpevalError):
    """A required nuisance or statistic is missing from the inputs."""


class ContractError(OpevalError):
    """An object was used in a state its contract does not allow."""


class ConvergenceError(OpevalError):
    """An iterative fit failed to converge or diverged.

    Attributes
    ----------
    residual : float
        Last observed residual (or objective magnitude on divergence).
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class PanelError(OpevalError, KeyError):
    """A policy panel lacks an entry required by a metric."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StageError(OpevalError):
    """A pipeline stage failed; the message names the stage and the failing cell."""


class MissingArtifactError(StageError):
    """An upstream artifact is absent; the message names the subcommand producing it."""
