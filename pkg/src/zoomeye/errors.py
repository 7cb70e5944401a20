"""Exception hierarchy shared across the package."""


class ZoomEyeError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(ZoomEyeError, ValueError):
    """A precondition of an operation was violated by the caller."""


class LeafExpansionError(ZoomEyeError):
    """Attempted to split a node that already sits at the maximum depth."""


class DegenerateBBoxError(ZoomEyeError, ValueError):
    """A box maps to an empty pixel rectangle."""


class TransportError(ZoomEyeError):
    """A remote backend could not be reached after all retries."""

    def __init__(self, message: str, attempts: int = 0, status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.status = status


class ExtractionError(ZoomEyeError):
    """A backend response did not contain usable Yes/No scores."""


class UnknownLabelError(ZoomEyeError, KeyError):
    """A simulated-scene query referenced no label present in the scene."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class CueParseError(ZoomEyeError):
    """A cue-generation reply could not be parsed into visual cues."""


class SceneGenerationError(ZoomEyeError):
    """Target placement was infeasible within the retry budget."""
