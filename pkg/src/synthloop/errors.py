"""Exception hierarchy shared across the package.

Exit-code mapping in the CLI relies on the split between ``ValidationError``
(bad inputs/config, exit 1) and the runtime errors (transport/budget, exit 2).
"""


class SynthloopError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SynthloopError):
    """Input data or configuration violates a documented contract."""


class ParseError(ValidationError):
    """A file or payload could not be parsed; message names the location."""


class TemplateError(ValidationError):
    """A prompt template placeholder could not be bound."""


class ExtractionError(ValidationError):
    """Expected span (e.g. a boxed answer) absent from a completion."""


class JudgeParseError(SynthloopError):
    """Judge completion yielded no scores after all re-asks; carries raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class CapabilityError(SynthloopError):
    """Endpoint does not support the requested capability."""


class TransportError(SynthloopError):
    """Remote call failed after retries."""


class ProtocolError(SynthloopError):
    """Remote payload present but malformed."""


class BudgetExceededError(SynthloopError):
    """A hard token cap blocks further charges for a role."""


class IntegrityError(SynthloopError):
    """Manifest/checkpoint contents are inconsistent or corrupted."""
