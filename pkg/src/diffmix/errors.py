class InvalidStateError(RuntimeError):
    """Operation preconditions on stored state or data are not met."""


class FingerprintMismatch(InvalidStateError):
    """An existing artifact was produced from different inputs or settings."""
