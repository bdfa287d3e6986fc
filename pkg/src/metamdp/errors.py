"""Exception taxonomy shared across the package.

Each class maps to one machine-parsable error category used by the CLI
(`metamdp.cli` prints "<category>: <message>" and exits nonzero).
"""


class MetaMdpError(Exception):
    """Base class for all package errors."""

    category = "internal-error"


class InvalidActionError(MetaMdpError):
    """A metalevel action is out of range or of the wrong kind."""

    category = "invalid-action"


class LifecycleError(MetaMdpError):
    """An operation was applied to an absorbing (post-termination) belief."""

    category = "lifecycle-error"


class ConstraintError(MetaMdpError):
    """A weight vector violates the simplex or interval constraints."""

    category = "constraint-error"


class ConfigurationError(MetaMdpError):
    """Invalid domain, search, or experiment configuration."""

    category = "config-error"


class ResourceLimitError(MetaMdpError):
    """A solver hit its configured state-count cap."""

    category = "resource-limit"


class CoverageError(MetaMdpError):
    """A value-table lookup fell outside the solved state set."""

    category = "coverage-error"


class DegenerateDesignError(MetaMdpError):
    """A regression design matrix has too few distinct rows."""

    category = "degenerate-design"


class MissingArtifactError(MetaMdpError):
    """A required trained-weights record or table file is absent."""

    category = "missing-artifact"
