class EnhancementError(Exception):
    """Base class for every error raised by the enhancement engine."""


class ChartSingularity(EnhancementError, ValueError):
    pass


class AngleOutOfBranch(EnhancementError, ValueError):
    pass


class OrderTooLarge(EnhancementError, ValueError):
    pass


class NonSPD(EnhancementError, ValueError):
    pass


class NegativeInput(EnhancementError, ValueError):
    pass


class AllZeroCoefficients(EnhancementError, ValueError):
    pass


class ZeroSpatialVelocity(EnhancementError, ValueError):
    pass


class FieldFormatError(EnhancementError, OSError):
    """Malformed or truncated field file."""


class NumericalFailure(EnhancementError, ArithmeticError):
    """An evolution or integration left its region of validity."""


class UnstableStep(NumericalFailure):
    pass


class CurvatureBlowup(NumericalFailure):
    pass


class WindowTooSmall(NumericalFailure):
    pass
