"""Exception hierarchy shared across the toolkit."""


class FgovdError(Exception):
    """Base class for all toolkit errors."""


class TaxonomyError(FgovdError):
    """Malformed or inconsistent taxonomy document."""


class InputValidationError(FgovdError):
    """An input file violates its documented schema."""


class ConfigurationError(FgovdError):
    """Invalid runtime configuration (flags, profiles, prompt setup)."""


class BackendError(FgovdError):
    """Transport failure talking to a completion backend; retryable."""


class DegenerateObjectError(FgovdError):
    """Object left without any attribute after simplification."""


class GenerationError(FgovdError):
    """Base class for negative-caption generation failures."""


class InsufficientAttributesError(GenerationError):
    """Object has fewer locatable attribute slots than the strategy needs."""


class NotApplicableError(GenerationError):
    """Object has no slot of the attribute type the strategy targets."""
