class NumericalError(RuntimeError):
    """Raised when an iterate or loss stops being finite."""
