"""Exception types shared across the reefsim package."""


class ReefsimError(Exception):
    """Base class for all reefsim errors."""


class IngestError(ReefsimError):
    """Video or image-directory input could not be read."""


class ContractViolation(ReefsimError):
    """An input violated a documented shape or value contract."""


class ParameterError(ReefsimError):
    """An operation received an out-of-range or inconsistent parameter."""


class NotFoundError(ReefsimError):
    """A referenced entity (cluster id, file) does not exist."""


class ConfigurationError(ReefsimError):
    """A stage configuration is unusable (missing classes, bad paths)."""


class NormalizationError(ReefsimError):
    """A degenerate (zero-norm) tensor cannot be normalized."""


class DivergenceError(ReefsimError):
    """Training loss stayed above the divergence guard for too long."""
