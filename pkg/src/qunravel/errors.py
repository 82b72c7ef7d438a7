"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NotHermitianError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


class IllConditionedError(ArithmeticError):
    """A flow is too close to singular to invert."""

    def __init__(self, msg, condition):
        super().__init__(msg)
        self.condition = condition


class IntegrationError(RuntimeError):
    """A dense integration step produced non-finite values."""

    def __init__(self, msg, time):
        super().__init__(msg)
        self.time = time


class PairingError(ValueError):
    """The shift c violates the unraveling constraint c >= -min w."""

    def __init__(self, msg, time, margin):
        super().__init__(msg)
        self.time = time
        self.margin = margin


class StepSizeError(RuntimeError):
    """Per-step jump probability too large for the chosen dt."""


class NegativeRateError(ValueError):
    pass
