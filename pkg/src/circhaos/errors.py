"""Exception types raised across the package.

Every error carries its class name as the structured identifier that the
CLI reports on stderr.
"""


class CirChaosError(Exception):
    """Base class for all domain errors."""


class InvalidParameters(CirChaosError, ValueError):
    pass


class NonIntegerDimension(CirChaosError, ValueError):
    pass


class InvalidTimeOrder(CirChaosError, ValueError):
    pass


class OutOfDomain(CirChaosError, ValueError):
    pass


class AsymmetricKernel(CirChaosError, ValueError):
    pass


class NonPositiveSpectrum(CirChaosError, ArithmeticError):
    """1 + mu * lambda_i <= 0 for some eigenvalue: outside the positivity domain."""


class OddPointCount(CirChaosError, ValueError):
    pass


class TooManyPoints(CirChaosError, ValueError):
    pass


class NonZeroInitialRate(CirChaosError, ValueError):
    pass


class ModeOutOfRange(CirChaosError, ValueError):
    pass


class InsufficientSamples(CirChaosError, ValueError):
    pass


class MarketPriceUnsupported(CirChaosError, ValueError):
    pass
