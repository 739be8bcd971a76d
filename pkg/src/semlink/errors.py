"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(ArithmeticError):
    """A public operation produced or received non-finite values."""


class StateError(RuntimeError):
    """Operation called before its prerequisite state exists."""


class ProtocolError(RuntimeError):
    """A protocol step is missing data it was promised."""


class TrainingFailure(RuntimeError):
    """Training ended without meeting its contract."""

    def __init__(self, message: str, accuracy: float | None = None):
        super().__init__(message)
        self.accuracy = accuracy
